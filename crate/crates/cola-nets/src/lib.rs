//! Network definitions shared by every learner: MLPs, a GRU cell for
//! action-observation histories, the consensus-embedding table, agent
//! Q-networks, VDN/QMIX mixers, and the MADDPG actor/critic, plus the
//! checkpoint container for named arrays.
//!
//! Every module offers two forward paths: `forward` records onto a
//! [`cola_tensor::Tape`] for training, `infer` runs plain tensor math for
//! rollouts and target evaluation. Tests pin the two paths to each other.

mod actor_critic;
mod agent;
mod checkpoint;
mod embedding;
mod gru;
mod mixer;
mod mlp;

pub use actor_critic::{Actor, ActorBinding, Critic, CriticBinding};
pub use agent::{AgentQNet, AgentQNetBinding, AgentQNetSpec};
pub use checkpoint::{fingerprint, load_arrays, param_count, save_arrays, CHECKPOINT_VERSION};
pub use embedding::{EmbeddingBinding, EmbeddingTable};
pub use gru::{GruBinding, GruCell};
pub use mixer::{QmixMixer, QmixMixerBinding, VdnMixer};
pub use mlp::{init_uniform, Activation, Linear, LinearBinding, Mlp, MlpBinding, MlpSpec, OutputActivation};

use cola_tensor::Parameter;

/// Anything that owns trainable parameters.
pub trait Net {
    fn params(&self) -> Vec<&Parameter>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}
