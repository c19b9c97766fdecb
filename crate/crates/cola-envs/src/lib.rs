//! Desk-scale cooperative Dec-POMDP environments: particle scenarios with
//! continuous forces for the actor-critic learners, and a discrete-action
//! grid predator-prey for the value-decomposition learners.
//!
//! Every environment owns its RNG, seeded at reset, so a (seed, action
//! sequence) pair fully determines the trajectory. All agents share one
//! scalar reward.

mod grid;
mod particle;

pub use grid::{
    egocentric_window, GridPredatorPrey, CAPTURE_REWARD, GRID_EPISODE_LIMIT, GRID_SIZE,
    N_GRID_PREDATORS, STEP_COST, WINDOW,
};
pub use particle::{
    heuristic_prey_policy, reward_navigation, reward_pantomime, reward_predator_prey,
    ParticleEnv, ParticleScenario, AGENT_RADIUS, COLLISION_PENALTY, DAMPING, DT,
    PARTICLE_EPISODE_LIMIT, PREY_ACCEL,
};

/// Which environment a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Navigation,
    PredatorPrey,
    Pantomime,
    GridPredatorPrey,
}

impl Scenario {
    pub fn from_name(name: &str) -> Option<Scenario> {
        match name {
            "navigation" => Some(Scenario::Navigation),
            "predator_prey" => Some(Scenario::PredatorPrey),
            "pantomime" => Some(Scenario::Pantomime),
            "grid_predator_prey" => Some(Scenario::GridPredatorPrey),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Navigation => "navigation",
            Scenario::PredatorPrey => "predator_prey",
            Scenario::Pantomime => "pantomime",
            Scenario::GridPredatorPrey => "grid_predator_prey",
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Scenario::GridPredatorPrey)
    }
}

/// Action space of an environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionSpec {
    /// Per-agent 2-vector force, each component in [-1, 1].
    Continuous { dims: usize },
    /// Per-agent choice among `n` moves.
    Discrete { n: usize },
}

/// One joint action for all learned agents.
#[derive(Clone, Debug)]
pub enum JointAction {
    Continuous(Vec<[f64; 2]>),
    Discrete(Vec<usize>),
}

/// Result of one environment step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Scalar reward shared by every agent.
    pub reward: f64,
    pub observations: Vec<Vec<f64>>,
    pub done: bool,
    /// Goal event (grid capture); false where undefined.
    pub captured: bool,
}

pub trait Environment {
    fn n_agents(&self) -> usize;
    fn obs_width(&self) -> usize;
    fn state_width(&self) -> usize;
    fn action_spec(&self) -> ActionSpec;
    fn episode_limit(&self) -> usize;
    /// Reseeds and replaces the episode; returns initial observations.
    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>>;
    /// Global state vector (training-time only under CTDE).
    fn state(&self) -> Vec<f64>;
    fn alive(&self) -> Vec<bool>;
    fn step(&mut self, action: &JointAction) -> StepOutcome;
}

pub fn make_env(scenario: Scenario) -> Box<dyn Environment> {
    match scenario {
        Scenario::Navigation => Box::new(ParticleEnv::new(ParticleScenario::Navigation)),
        Scenario::PredatorPrey => Box::new(ParticleEnv::new(ParticleScenario::PredatorPrey)),
        Scenario::Pantomime => Box::new(ParticleEnv::new(ParticleScenario::Pantomime)),
        Scenario::GridPredatorPrey => Box::new(GridPredatorPrey::new()),
    }
}
