use cola_envs::Scenario;

// Network widths are fixed for every run (desk-scale sizes).
pub const AGENT_ENCODER_WIDTH: usize = 64;
pub const AGENT_GRU_WIDTH: usize = 64;
pub const MIXER_EMBED_WIDTH: usize = 32;
pub const MIXER_HYPER_HIDDEN: usize = 64;
pub const CRITIC_HIDDEN_WIDTH: usize = 64;
pub const CONSENSUS_EMBED_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    ColaQmix,
    Qmix,
    ColaVdn,
    Vdn,
    ColaMaddpg,
    Maddpg,
}

impl Algorithm {
    pub fn from_name(name: &str) -> Option<Algorithm> {
        match name {
            "cola_qmix" => Some(Algorithm::ColaQmix),
            "qmix" => Some(Algorithm::Qmix),
            "cola_vdn" => Some(Algorithm::ColaVdn),
            "vdn" => Some(Algorithm::Vdn),
            "cola_maddpg" => Some(Algorithm::ColaMaddpg),
            "maddpg" => Some(Algorithm::Maddpg),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::ColaQmix => "cola_qmix",
            Algorithm::Qmix => "qmix",
            Algorithm::ColaVdn => "cola_vdn",
            Algorithm::Vdn => "vdn",
            Algorithm::ColaMaddpg => "cola_maddpg",
            Algorithm::Maddpg => "maddpg",
        }
    }

    pub fn uses_consensus(&self) -> bool {
        matches!(self, Algorithm::ColaQmix | Algorithm::ColaVdn | Algorithm::ColaMaddpg)
    }

    pub fn is_value_decomposition(&self) -> bool {
        !matches!(self, Algorithm::ColaMaddpg | Algorithm::Maddpg)
    }

    pub fn uses_qmix_mixer(&self) -> bool {
        matches!(self, Algorithm::ColaQmix | Algorithm::Qmix)
    }
}

/// What the consensus builder reads per agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConsensusInput {
    /// Raw local observation (the actor-critic path).
    Observation,
    /// Gradient-blocked GRU hidden state (the value-decomposition path).
    HiddenState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateAccess {
    /// The mixer may read the environment's global state.
    Full,
    /// The mixer sees only concatenated observations.
    ObservationsOnly,
}

/// Everything a training run needs beyond the output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub scenario: Scenario,
    pub seed: u64,
    pub total_env_steps: u64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Hard target sync period, in episodes (value decomposition).
    pub target_update_interval: u64,
    /// Environment steps between update rounds (MADDPG).
    pub update_interval_steps: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub rl_learning_rate: f64,
    pub grad_clip: f64,
    pub polyak: f64,
    pub min_buffer_episodes: usize,
    pub min_buffer_transitions: usize,
    pub consensus_classes: usize,
    pub consensus_input: ConsensusInput,
    pub consensus_lr: f64,
    pub centering: bool,
    pub state_access: StateAccess,
    pub share_agent_net: bool,
    pub eval_interval_steps: u64,
    pub eval_episodes: usize,
    /// Hash builder/RL parameters around every update and abort on overlap.
    pub check_isolation: bool,
    /// Append per-step consensus rows for evaluation episodes.
    pub trace_consensus: bool,
}

impl TrainConfig {
    /// Per-algorithm defaults; K defaults to 4 everywhere (desk scenarios).
    pub fn new(algorithm: Algorithm, scenario: Scenario) -> Self {
        let value_decomp = algorithm.is_value_decomposition();
        TrainConfig {
            algorithm,
            scenario,
            seed: 0,
            total_env_steps: 50_000,
            gamma: if value_decomp { 0.99 } else { 0.95 },
            batch_size: if value_decomp { 32 } else { 1024 },
            buffer_capacity: if value_decomp { 5_000 } else { 1_000_000 },
            target_update_interval: 200,
            update_interval_steps: 100,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 10_000,
            sigma_start: 0.3,
            sigma_end: 0.05,
            rl_learning_rate: if value_decomp { 0.0005 } else { 0.01 },
            grad_clip: 10.0,
            polyak: 0.99,
            min_buffer_episodes: 32,
            min_buffer_transitions: 5_000,
            consensus_classes: 4,
            consensus_input: if value_decomp {
                ConsensusInput::HiddenState
            } else {
                ConsensusInput::Observation
            },
            consensus_lr: 1e-3,
            centering: true,
            state_access: StateAccess::Full,
            share_agent_net: true,
            eval_interval_steps: 1_000,
            eval_episodes: 16,
            check_isolation: false,
            trace_consensus: true,
        }
    }

    pub fn validate(&self) {
        assert!((0.0..1.0).contains(&self.gamma), "gamma must be in [0, 1)");
        assert!(self.total_env_steps > 0, "total_env_steps must be positive");
        assert!(self.batch_size > 0 && self.buffer_capacity >= self.batch_size);
        assert!(self.target_update_interval > 0 && self.update_interval_steps > 0);
        assert!(self.consensus_classes >= 2, "consensus needs at least 2 classes");
        assert!(self.eval_interval_steps > 0 && self.eval_episodes > 0);
        assert!(
            !self.algorithm.is_value_decomposition() || self.scenario.is_discrete(),
            "value decomposition needs a discrete-action scenario"
        );
        assert!(
            self.algorithm.is_value_decomposition() || !self.scenario.is_discrete(),
            "the actor-critic path needs a continuous-action scenario"
        );
    }
}
