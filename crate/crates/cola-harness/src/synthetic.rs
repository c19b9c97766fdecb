use cola_consensus::{marginal_entropy, pairwise_agreement, AgentViews, ConsensusBuilder, ConsensusConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};

/// A desk-scale multi-view benchmark: `latent_states` hidden states, each
/// agent seeing them through its own fixed random linear map plus Gaussian
/// noise. The builder must map all views of one state to one class.
#[derive(Clone, Debug)]
pub struct SyntheticMultiViewSpec {
    pub latent_states: usize,
    pub agents: usize,
    pub view_dim: usize,
    pub sigma_view: f64,
    pub samples_per_state: usize,
    pub classes: usize,
    pub max_steps: u64,
    pub batch_states: usize,
    pub seed: u64,
    pub centering: bool,
}

impl Default for SyntheticMultiViewSpec {
    fn default() -> Self {
        SyntheticMultiViewSpec {
            latent_states: 8,
            agents: 3,
            view_dim: 16,
            sigma_view: 0.05,
            samples_per_state: 25,
            classes: 8,
            max_steps: 20_000,
            batch_states: 32,
            seed: 0,
            centering: true,
        }
    }
}

impl SyntheticMultiViewSpec {
    /// Reads the flat key-value format used everywhere else.
    pub fn parse_str(text: &str) -> Result<SyntheticMultiViewSpec, ConfigError> {
        let mut spec = SyntheticMultiViewSpec::default();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || (line.starts_with('[') && line.ends_with(']')) {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadValue {
                    key: line.to_string(),
                    value: String::new(),
                    reason: "expected `key = value`".to_string(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            let bad = |reason: &str| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                reason: reason.to_string(),
            };
            match key {
                "latent_states" => spec.latent_states = value.parse().map_err(|_| bad("integer"))?,
                "agents" => spec.agents = value.parse().map_err(|_| bad("integer"))?,
                "view_dim" => spec.view_dim = value.parse().map_err(|_| bad("integer"))?,
                "sigma_view" => spec.sigma_view = value.parse().map_err(|_| bad("number"))?,
                "samples_per_state" => {
                    spec.samples_per_state = value.parse().map_err(|_| bad("integer"))?
                }
                "k" => spec.classes = value.parse().map_err(|_| bad("integer"))?,
                "max_steps" => spec.max_steps = value.parse().map_err(|_| bad("integer"))?,
                "batch_states" => spec.batch_states = value.parse().map_err(|_| bad("integer"))?,
                "seed" => spec.seed = value.parse().map_err(|_| bad("integer"))?,
                "centering" => {
                    spec.centering = match value {
                        "true" | "on" | "1" => true,
                        "false" | "off" | "0" => false,
                        _ => return Err(bad("true|false")),
                    }
                }
                _ => return Err(ConfigError::UnknownKey(key.to_string())),
            }
        }
        Ok(spec)
    }

    /// Matching builder learning rate and scalars come from the run config
    /// defaults so the benchmark exercises the production settings.
    fn builder_config(&self) -> ConsensusConfig {
        let defaults =
            RunConfig::defaults(cola_algos::Algorithm::ColaVdn, cola_envs::Scenario::GridPredatorPrey);
        let mut cfg = ConsensusConfig::new(self.classes, self.view_dim);
        cfg.centering = self.centering;
        cfg.learning_rate = defaults.train.consensus_lr;
        cfg
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SyntheticReport {
    pub centering: bool,
    pub steps_run: u64,
    pub final_loss: f64,
    pub pairwise_agreement: f64,
    pub classes_used: usize,
    pub marginal_entropy: f64,
}

struct ViewSampler {
    /// per agent: `view_dim x latent_states`, column g is the clean view
    maps: Vec<Vec<f64>>,
    spec: SyntheticMultiViewSpec,
}

impl ViewSampler {
    fn new(spec: &SyntheticMultiViewSpec, rng: &mut ChaCha8Rng) -> ViewSampler {
        let maps = (0..spec.agents)
            .map(|_| {
                (0..spec.view_dim * spec.latent_states).map(|_| standard_normal(rng)).collect()
            })
            .collect();
        ViewSampler { maps, spec: spec.clone() }
    }

    fn view(&self, agent: usize, state: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let g = self.spec.latent_states;
        (0..self.spec.view_dim)
            .map(|d| self.maps[agent][d * g + state] + self.spec.sigma_view * standard_normal(rng))
            .collect()
    }

    fn timestep(&self, state: usize, rng: &mut ChaCha8Rng) -> AgentViews {
        AgentViews::all_alive(
            (0..self.spec.agents).map(|a| self.view(a, state, rng)).collect(),
        )
    }
}

/// Trains a fresh builder on the synthetic task, stopping early once the
/// evaluation comfortably clears agreement 0.97 and half the class budget.
pub fn run_synthetic(spec: &SyntheticMultiViewSpec) -> SyntheticReport {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sampler = ViewSampler::new(spec, &mut rng);
    let mut builder = ConsensusBuilder::new(spec.builder_config(), &mut rng);

    let mut steps_run = 0;
    let mut last_loss = f64::NAN;
    while steps_run < spec.max_steps {
        let batch: Vec<AgentViews> = (0..spec.batch_states)
            .map(|_| {
                let state = rng.gen_range(0..spec.latent_states);
                sampler.timestep(state, &mut rng)
            })
            .collect();
        last_loss = builder.train_step(&batch);
        steps_run += 1;

        if steps_run % 250 == 0 {
            let probe = evaluate(spec, &sampler, &builder, spec.seed ^ 0x5eed);
            if probe.pairwise_agreement >= 0.97
                && probe.classes_used * 2 >= spec.classes.min(spec.latent_states)
            {
                break;
            }
        }
    }

    let eval = evaluate(spec, &sampler, &builder, spec.seed ^ 0x5eed);
    SyntheticReport {
        centering: spec.centering,
        steps_run,
        final_loss: last_loss,
        pairwise_agreement: eval.pairwise_agreement,
        classes_used: eval.classes_used,
        marginal_entropy: eval.marginal_entropy,
    }
}

struct EvalStats {
    pairwise_agreement: f64,
    classes_used: usize,
    marginal_entropy: f64,
}

fn evaluate(
    spec: &SyntheticMultiViewSpec,
    sampler: &ViewSampler,
    builder: &ConsensusBuilder,
    seed: u64,
) -> EvalStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_step: Vec<Vec<usize>> = Vec::new();
    let mut pooled: Vec<usize> = Vec::new();
    for state in 0..spec.latent_states {
        for _ in 0..spec.samples_per_state {
            let views = sampler.timestep(state, &mut rng);
            let classes: Vec<usize> = views.features.iter().map(|f| builder.infer(f)).collect();
            pooled.extend(classes.iter().copied());
            per_step.push(classes);
        }
    }
    let mut used = vec![false; spec.classes];
    for &c in &pooled {
        used[c] = true;
    }
    EvalStats {
        pairwise_agreement: pairwise_agreement(&per_step),
        classes_used: used.iter().filter(|&&u| u).count(),
        marginal_entropy: marginal_entropy(&pooled, spec.classes),
    }
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_separable_case_reaches_high_agreement() {
        let spec = SyntheticMultiViewSpec {
            latent_states: 4,
            agents: 2,
            view_dim: 8,
            sigma_view: 0.0,
            samples_per_state: 10,
            classes: 4,
            max_steps: 4_000,
            batch_states: 16,
            seed: 3,
            centering: true,
        };
        let report = run_synthetic(&spec);
        assert!(report.pairwise_agreement >= 0.99, "agreement {}", report.pairwise_agreement);
    }

    #[test]
    fn class_usage_is_bounded_by_k() {
        // more latent states than classes: the builder can use at most K
        let spec = SyntheticMultiViewSpec {
            latent_states: 8,
            agents: 2,
            view_dim: 8,
            sigma_view: 0.0,
            samples_per_state: 5,
            classes: 4,
            max_steps: 1_500,
            batch_states: 16,
            seed: 4,
            centering: true,
        };
        let report = run_synthetic(&spec);
        assert!(report.classes_used <= 4);
        assert!(report.pairwise_agreement > 0.8, "agreement {}", report.pairwise_agreement);
    }

    #[test]
    fn spec_parser_rejects_unknown_keys() {
        let err = SyntheticMultiViewSpec::parse_str("views = 3\n").unwrap_err();
        assert!(err.to_string().contains("views"));
    }
}
