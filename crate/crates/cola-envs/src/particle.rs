use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ActionSpec, Environment, JointAction, StepOutcome};

pub const DT: f64 = 0.1;
pub const DAMPING: f64 = 0.25;
pub const AGENT_RADIUS: f64 = 0.1;
pub const PARTICLE_EPISODE_LIMIT: usize = 100;
pub const COLLISION_PENALTY: f64 = 1.0;
/// The heuristic prey accelerates this much faster than the predators.
pub const PREY_ACCEL: f64 = 1.3;
const OBSTACLE_RADIUS: f64 = 0.2;
const CATCH_SHAPING: f64 = 0.1;
const CATCH_REWARD: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParticleScenario {
    /// 3 agents cover 3 landmarks while avoiding collisions.
    Navigation,
    /// 3 predators chase one faster heuristic prey around 2 obstacles.
    PredatorPrey,
    /// 2 agents each seek a target only the other agent can see.
    Pantomime,
}

#[derive(Clone, Copy, Debug, Default)]
struct Body {
    pos: [f64; 2],
    vel: [f64; 2],
}

pub struct ParticleEnv {
    scenario: ParticleScenario,
    agents: Vec<Body>,
    prey: Option<Body>,
    /// Navigation/pantomime targets, or predator-prey obstacles.
    landmarks: Vec<[f64; 2]>,
    t: usize,
    rng: ChaCha8Rng,
}

impl ParticleEnv {
    pub fn new(scenario: ParticleScenario) -> Self {
        let mut env = ParticleEnv {
            scenario,
            agents: Vec::new(),
            prey: None,
            landmarks: Vec::new(),
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        env.reset(0);
        env
    }

    fn n(&self) -> usize {
        match self.scenario {
            ParticleScenario::Navigation | ParticleScenario::PredatorPrey => 3,
            ParticleScenario::Pantomime => 2,
        }
    }

    fn observation(&self, a: usize) -> Vec<f64> {
        let me = &self.agents[a];
        let mut obs = vec![me.vel[0], me.vel[1], me.pos[0], me.pos[1]];
        let rel = |obs: &mut Vec<f64>, p: [f64; 2]| {
            obs.push(p[0] - me.pos[0]);
            obs.push(p[1] - me.pos[1]);
        };
        match self.scenario {
            ParticleScenario::Navigation => {
                for &l in &self.landmarks {
                    rel(&mut obs, l);
                }
                for (i, other) in self.agents.iter().enumerate() {
                    if i != a {
                        rel(&mut obs, other.pos);
                    }
                }
            }
            ParticleScenario::PredatorPrey => {
                for &l in &self.landmarks {
                    rel(&mut obs, l);
                }
                for (i, other) in self.agents.iter().enumerate() {
                    if i != a {
                        rel(&mut obs, other.pos);
                    }
                }
                let prey = self.prey.as_ref().unwrap();
                rel(&mut obs, prey.pos);
                obs.push(prey.vel[0]);
                obs.push(prey.vel[1]);
            }
            ParticleScenario::Pantomime => {
                let other = 1 - a;
                rel(&mut obs, self.agents[other].pos);
                // the other agent's target; an agent never sees its own
                rel(&mut obs, self.landmarks[other]);
            }
        }
        obs
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|a| self.observation(a)).collect()
    }

    fn resolve_obstacles(&mut self) {
        if self.scenario != ParticleScenario::PredatorPrey {
            return;
        }
        let obstacles = self.landmarks.clone();
        let push_out = |b: &mut Body| {
            for &o in &obstacles {
                let min_dist = OBSTACLE_RADIUS + AGENT_RADIUS;
                let dx = b.pos[0] - o[0];
                let dy = b.pos[1] - o[1];
                let d = (dx * dx + dy * dy).sqrt();
                if d < min_dist {
                    if d < 1e-9 {
                        b.pos[0] = o[0] + min_dist;
                    } else {
                        b.pos[0] = o[0] + dx / d * min_dist;
                        b.pos[1] = o[1] + dy / d * min_dist;
                    }
                }
            }
        };
        for a in &mut self.agents {
            push_out(a);
        }
        if let Some(prey) = &mut self.prey {
            push_out(prey);
        }
    }
}

fn integrate(b: &mut Body, force: [f64; 2]) {
    for d in 0..2 {
        let f = force[d].clamp(-1.0, 1.0);
        b.vel[d] = b.vel[d] * (1.0 - DAMPING) + f * DT;
        b.pos[d] += b.vel[d] * DT;
        // elastic clamp at the world bounds
        if b.pos[d] > 1.0 {
            b.pos[d] = 1.0;
            b.vel[d] = -b.vel[d];
        } else if b.pos[d] < -1.0 {
            b.pos[d] = -1.0;
            b.vel[d] = -b.vel[d];
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// `-sum_landmarks min_agent dist - penalty * colliding pairs`.
pub fn reward_navigation(agents: &[[f64; 2]], landmarks: &[[f64; 2]]) -> f64 {
    let mut r = 0.0;
    for &l in landmarks {
        let nearest = agents.iter().map(|&a| dist(a, l)).fold(f64::INFINITY, f64::min);
        r -= nearest;
    }
    for i in 0..agents.len() {
        for j in i + 1..agents.len() {
            if dist(agents[i], agents[j]) < 2.0 * AGENT_RADIUS {
                r -= COLLISION_PENALTY;
            }
        }
    }
    r
}

/// Shared catch bonus once per step plus a distance-shaping term.
pub fn reward_predator_prey(predators: &[[f64; 2]], prey: [f64; 2]) -> f64 {
    let caught = predators.iter().any(|&p| dist(p, prey) < 2.0 * AGENT_RADIUS);
    let shaping: f64 = predators.iter().map(|&p| dist(p, prey)).sum();
    (if caught { CATCH_REWARD } else { 0.0 }) - CATCH_SHAPING * shaping
}

/// `-(dist(agent_i, target_i))` summed over both agents.
pub fn reward_pantomime(agents: &[[f64; 2]], targets: &[[f64; 2]]) -> f64 {
    -agents.iter().zip(targets).map(|(&a, &t)| dist(a, t)).sum::<f64>()
}

/// Unit force pointing away from the nearest predator. The RNG only breaks
/// the degenerate case of a predator exactly on top of the prey.
pub fn heuristic_prey_policy(
    prey: [f64; 2],
    predators: &[[f64; 2]],
    rng: &mut dyn rand::RngCore,
) -> [f64; 2] {
    let nearest = predators
        .iter()
        .copied()
        .min_by(|a, b| dist(prey, *a).total_cmp(&dist(prey, *b)))
        .expect("at least one predator");
    let dx = prey[0] - nearest[0];
    let dy = prey[1] - nearest[1];
    let d = (dx * dx + dy * dy).sqrt();
    if d < 1e-9 {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        [angle.cos(), angle.sin()]
    } else {
        [dx / d, dy / d]
    }
}

impl Environment for ParticleEnv {
    fn n_agents(&self) -> usize {
        self.n()
    }

    fn obs_width(&self) -> usize {
        match self.scenario {
            ParticleScenario::Navigation => 14,
            ParticleScenario::PredatorPrey => 16,
            ParticleScenario::Pantomime => 8,
        }
    }

    fn state_width(&self) -> usize {
        match self.scenario {
            ParticleScenario::Navigation => 18,
            ParticleScenario::PredatorPrey => 20,
            ParticleScenario::Pantomime => 12,
        }
    }

    fn action_spec(&self) -> ActionSpec {
        ActionSpec::Continuous { dims: 2 }
    }

    fn episode_limit(&self) -> usize {
        PARTICLE_EPISODE_LIMIT
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        let n = self.n();
        let sample = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> [f64; 2] {
            [rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
        };
        match self.scenario {
            ParticleScenario::Navigation | ParticleScenario::Pantomime => {
                self.landmarks = (0..n).map(|_| sample(&mut self.rng, -0.9, 0.9)).collect();
                self.agents =
                    (0..n).map(|_| Body { pos: sample(&mut self.rng, -1.0, 1.0), vel: [0.0; 2] }).collect();
                self.prey = None;
            }
            ParticleScenario::PredatorPrey => {
                // obstacles are regenerated each round; resample overlaps
                let mut obstacles: Vec<[f64; 2]> = Vec::new();
                while obstacles.len() < 2 {
                    let candidate = sample(&mut self.rng, -0.6, 0.6);
                    if obstacles.iter().all(|&o| dist(o, candidate) > 2.5 * OBSTACLE_RADIUS) {
                        obstacles.push(candidate);
                    }
                }
                self.landmarks = obstacles;
                let clear = |landmarks: &[[f64; 2]], p: [f64; 2]| {
                    landmarks.iter().all(|&o| dist(o, p) > OBSTACLE_RADIUS + AGENT_RADIUS)
                };
                let place = |rng: &mut ChaCha8Rng, landmarks: &[[f64; 2]]| -> Body {
                    loop {
                        let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                        if clear(landmarks, p) {
                            return Body { pos: p, vel: [0.0; 2] };
                        }
                    }
                };
                self.agents = (0..n).map(|_| place(&mut self.rng, &self.landmarks)).collect();
                self.prey = Some(place(&mut self.rng, &self.landmarks));
            }
        }
        self.observations()
    }

    fn state(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.state_width());
        for a in &self.agents {
            s.extend_from_slice(&a.pos);
            s.extend_from_slice(&a.vel);
        }
        if let Some(prey) = &self.prey {
            s.extend_from_slice(&prey.pos);
            s.extend_from_slice(&prey.vel);
        }
        for &l in &self.landmarks {
            s.extend_from_slice(&l);
        }
        s
    }

    fn alive(&self) -> Vec<bool> {
        vec![true; self.n()]
    }

    fn step(&mut self, action: &JointAction) -> StepOutcome {
        let forces = match action {
            JointAction::Continuous(f) => f,
            JointAction::Discrete(_) => panic!("particle scenarios take continuous actions"),
        };
        assert!(
            forces.len() == self.n(),
            "joint action has {} entries for {} agents",
            forces.len(),
            self.n()
        );
        assert!(self.t < PARTICLE_EPISODE_LIMIT, "step() after the episode ended");

        let prey_force = self.prey.as_ref().map(|prey| {
            let predators: Vec<[f64; 2]> = self.agents.iter().map(|a| a.pos).collect();
            let dir = heuristic_prey_policy(prey.pos, &predators, &mut self.rng);
            [dir[0] * PREY_ACCEL, dir[1] * PREY_ACCEL]
        });
        for (body, &f) in self.agents.iter_mut().zip(forces) {
            integrate(body, f);
        }
        if let (Some(prey), Some(f)) = (&mut self.prey, prey_force) {
            integrate(prey, f);
        }
        self.resolve_obstacles();
        self.t += 1;

        let agent_pos: Vec<[f64; 2]> = self.agents.iter().map(|a| a.pos).collect();
        let reward = match self.scenario {
            ParticleScenario::Navigation => reward_navigation(&agent_pos, &self.landmarks),
            ParticleScenario::PredatorPrey => {
                reward_predator_prey(&agent_pos, self.prey.as_ref().unwrap().pos)
            }
            ParticleScenario::Pantomime => reward_pantomime(&agent_pos, &self.landmarks),
        };
        StepOutcome {
            reward,
            observations: self.observations(),
            done: self.t >= PARTICLE_EPISODE_LIMIT,
            captured: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Environment;

    #[test]
    fn integrator_matches_stated_update() {
        let mut b = Body::default();
        integrate(&mut b, [1.0, 0.0]);
        assert!((b.vel[0] - 0.1).abs() < 1e-12);
        assert!((b.pos[0] - 0.01).abs() < 1e-12);
        assert_eq!(b.vel[1], 0.0);
        assert_eq!(b.pos[1], 0.0);
    }

    #[test]
    fn zero_force_zero_velocity_is_stationary() {
        let mut b = Body { pos: [0.3, -0.4], vel: [0.0, 0.0] };
        integrate(&mut b, [0.0, 0.0]);
        assert_eq!(b.pos, [0.3, -0.4]);
    }

    #[test]
    fn episode_ends_exactly_at_the_limit() {
        let mut env = ParticleEnv::new(ParticleScenario::Pantomime);
        env.reset(7);
        let action = JointAction::Continuous(vec![[0.0, 0.0]; 2]);
        for t in 1..=PARTICLE_EPISODE_LIMIT {
            let out = env.step(&action);
            assert_eq!(out.done, t == PARTICLE_EPISODE_LIMIT, "done flag wrong at t={t}");
        }
    }

    #[test]
    fn navigation_reward_examples() {
        // all agents exactly on distinct landmarks, no collisions
        let agents = [[0.0, 0.0], [0.5, 0.5], [-0.5, -0.5]];
        let landmarks = agents;
        assert_eq!(reward_navigation(&agents, &landmarks), 0.0);

        // a single landmark at distance d from the nearest agent
        let agents = [[0.0, 0.0], [0.9, 0.9]];
        let landmarks = [[0.3, 0.4]];
        assert!((reward_navigation(&agents, &landmarks) + 0.5).abs() < 1e-12);

        // two overlapping agents add one collision penalty
        let agents = [[0.0, 0.0], [0.05, 0.0]];
        let landmarks = [[0.0, 0.0]];
        let expected = -0.0 - COLLISION_PENALTY;
        assert!((reward_navigation(&agents, &landmarks) - expected).abs() < 1e-12);
    }

    #[test]
    fn predator_prey_reward_examples() {
        // equidistant predators, no contact: pure shaping
        let predators = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]];
        let r = reward_predator_prey(&predators, [0.0, 0.0]);
        assert!((r + 0.1 * 3.0).abs() < 1e-12);

        // contact pays the bonus exactly once per step
        let predators = [[0.05, 0.0], [0.15, 0.0], [3.0_f64.sqrt(), 0.0]];
        let r = reward_predator_prey(&predators, [0.0, 0.0]);
        let shaping = 0.1 * (0.05 + 0.15 + 3.0_f64.sqrt());
        assert!((r - (10.0 - shaping)).abs() < 1e-12);
    }

    #[test]
    fn prey_flees_directly_away() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dir = heuristic_prey_policy([0.0, 0.0], &[[1.0, 0.0]], &mut rng);
        assert!((dir[0] + 1.0).abs() < 1e-12);
        assert!(dir[1].abs() < 1e-12);
    }

    #[test]
    fn pantomime_reward_examples() {
        let agents = [[0.1, 0.1], [-0.2, 0.3]];
        assert_eq!(reward_pantomime(&agents, &agents), 0.0);

        let agents = [[0.0, 0.0], [0.0, 0.0]];
        let targets = [[0.5, 0.0], [0.0, 0.3]];
        assert!((reward_pantomime(&agents, &targets) + 0.8).abs() < 1e-12);
    }

    #[test]
    fn pantomime_observation_hides_own_target() {
        let mut env = ParticleEnv::new(ParticleScenario::Pantomime);
        env.reset(3);
        let me = env.agents[0].pos;
        let obs0 = env.observation(0);
        // last two entries are the other agent's target, relative to me
        let other_target = [obs0[6] + me[0], obs0[7] + me[1]];
        assert!((other_target[0] - env.landmarks[1][0]).abs() < 1e-12);
        assert!((other_target[1] - env.landmarks[1][1]).abs() < 1e-12);
        // own target (landmark 0) appears nowhere in the observation
        let own = env.landmarks[0];
        let rel = [own[0] - me[0], own[1] - me[1]];
        for pair in obs0.chunks(2) {
            assert!(
                (pair[0] - rel[0]).abs() > 1e-9 || (pair[1] - rel[1]).abs() > 1e-9,
                "own target leaked into the observation"
            );
        }
    }

    #[test]
    fn navigation_has_three_agents_and_three_landmarks() {
        let mut env = ParticleEnv::new(ParticleScenario::Navigation);
        env.reset(0);
        assert_eq!(env.agents.len(), 3);
        assert_eq!(env.landmarks.len(), 3);
    }

    #[test]
    fn same_seed_gives_identical_initial_state() {
        let mut env = ParticleEnv::new(ParticleScenario::PredatorPrey);
        let a = env.reset(42);
        let s1 = env.state();
        let b = env.reset(42);
        let s2 = env.state();
        assert_eq!(a, b);
        assert_eq!(s1, s2);
    }

    #[test]
    fn positions_stay_in_bounds_under_wild_forces() {
        let mut env = ParticleEnv::new(ParticleScenario::PredatorPrey);
        env.reset(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..PARTICLE_EPISODE_LIMIT {
            let forces = (0..3).map(|_| [rng.gen_range(-1.0..1.0), 1.0]).collect();
            env.step(&JointAction::Continuous(forces));
            for v in env.state() {
                assert!(v.abs() <= 1.0 + 1e-9 || v.abs() <= 2.0, "state value out of range: {v}");
            }
            for a in &env.agents {
                assert!(a.pos[0].abs() <= 1.0 && a.pos[1].abs() <= 1.0);
            }
        }
    }
}
