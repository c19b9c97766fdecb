//! Training procedures: value decomposition (QMIX/VDN, with or without the
//! consensus input) over episode replay, and MADDPG over transition replay,
//! plus the shared orchestration loop, buffers, schedules, and metrics.
//!
//! The two update families never exchange gradients with the consensus
//! builder: RL losses treat consensus indices as constants, and the builder
//! trains only its student head. The loop can hash both parameter sets
//! around every update to prove it.

mod buffer;
mod config;
mod maddpg;
mod metrics;
mod schedule;
mod train;
mod value_decomp;

pub use buffer::{Episode, EpisodeBuffer, Transition, TransitionBuffer};
pub use config::{
    Algorithm, ConsensusInput, StateAccess, TrainConfig, AGENT_ENCODER_WIDTH, AGENT_GRU_WIDTH,
    CONSENSUS_EMBED_DIM, CRITIC_HIDDEN_WIDTH, MIXER_EMBED_WIDTH, MIXER_HYPER_HIDDEN,
};
pub use maddpg::{Maddpg, MaddpgUpdateStats};
pub use metrics::MetricsRecord;
pub use schedule::{epsilon_greedy, LinearSchedule};
pub use train::{random_policy_return, train, EvalSummary, RunArtifacts};
pub use value_decomp::{td_targets_vdn, ValueDecomposition, VdUpdateStats};
