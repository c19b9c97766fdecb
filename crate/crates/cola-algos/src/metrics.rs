use serde::{Deserialize, Serialize};

/// One JSONL record per logging interval. Field order is fixed by the
/// struct, so identical runs serialize to identical bytes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub env_steps: u64,
    pub episodes: u64,
    pub rl_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cb_loss: Option<f64>,
    pub mean_eval_return: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capture_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consensus_marginal_entropy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairwise_consensus_agreement: Option<f64>,
}
