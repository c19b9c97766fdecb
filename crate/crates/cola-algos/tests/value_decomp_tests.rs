//! Trainer-level checks for the value-decomposition path: an independent
//! reconstruction of the single-step loss, finite differences through the
//! full consensus-conditioned TD loss, padding and dead-agent masking, and
//! update isolation.

use cola_algos::{Algorithm, Episode, TrainConfig, ValueDecomposition};
use cola_envs::{make_env, ActionSpec, Environment, JointAction, Scenario, StepOutcome};
use cola_tensor::{finite_difference_check_at, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dimension stub: lets tests build learners for arbitrary agent counts.
struct DimsEnv {
    n_agents: usize,
    obs_width: usize,
    n_actions: usize,
    state_width: usize,
}

impl Environment for DimsEnv {
    fn n_agents(&self) -> usize {
        self.n_agents
    }
    fn obs_width(&self) -> usize {
        self.obs_width
    }
    fn state_width(&self) -> usize {
        self.state_width
    }
    fn action_spec(&self) -> ActionSpec {
        ActionSpec::Discrete { n: self.n_actions }
    }
    fn episode_limit(&self) -> usize {
        10
    }
    fn reset(&mut self, _seed: u64) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.obs_width]; self.n_agents]
    }
    fn state(&self) -> Vec<f64> {
        vec![0.0; self.state_width]
    }
    fn alive(&self) -> Vec<bool> {
        vec![true; self.n_agents]
    }
    fn step(&mut self, _action: &JointAction) -> StepOutcome {
        panic!("DimsEnv provides dimensions only")
    }
}

fn rand_obs(rng: &mut ChaCha8Rng, width: usize) -> Vec<f64> {
    (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Hand-built episode with random observations and the given actions.
fn toy_episode(
    rng: &mut ChaCha8Rng,
    n_agents: usize,
    obs_width: usize,
    state_width: usize,
    actions: Vec<Vec<usize>>,
    rewards: Vec<f64>,
) -> Episode {
    let len = rewards.len();
    Episode {
        obs: (0..=len).map(|_| (0..n_agents).map(|_| rand_obs(rng, obs_width)).collect()).collect(),
        state: (0..=len).map(|_| rand_obs(rng, state_width)).collect(),
        alive: vec![vec![true; n_agents]; len + 1],
        actions,
        consensus: vec![vec![0; n_agents]; len],
        rewards,
        captured: false,
    }
}

#[test]
fn single_step_vdn_loss_matches_independent_reconstruction() {
    let dims = DimsEnv { n_agents: 2, obs_width: 4, n_actions: 3, state_width: 5 };
    let cfg = TrainConfig::new(Algorithm::Vdn, Scenario::GridPredatorPrey);
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let learner = ValueDecomposition::new(cfg, &dims, &mut rng);

    let mut data_rng = ChaCha8Rng::seed_from_u64(101);
    let episode = toy_episode(&mut data_rng, 2, 4, 5, vec![vec![2, 0]], vec![1.5]);

    // independent route: rebuild the feature layout and evaluate the agent
    // net directly; single-step episodes are terminal, so y = r
    let net = &learner.agent_nets()[0];
    let mut q_tot = 0.0;
    for a in 0..2 {
        let mut row = episode.obs[0][a].clone();
        row.extend(vec![0.0; 3]); // no previous action
        let mut id = vec![0.0; 2];
        id[a] = 1.0;
        row.extend(id);
        let features = Tensor::new(&[1, row.len()], row);
        let (q, _) = net.infer(&features, None, &net.initial_state(1));
        q_tot += q.row(0)[episode.actions[0][a]];
    }
    let expected = (1.5 - q_tot) * (1.5 - q_tot);
    let got = learner.loss_on_batch(&[&episode]);
    assert!((got - expected).abs() < 1e-12, "loss {got} vs reconstruction {expected}");
}

#[test]
fn gamma_zero_targets_reduce_to_rewards() {
    let dims = DimsEnv { n_agents: 2, obs_width: 4, n_actions: 3, state_width: 5 };
    let mut cfg = TrainConfig::new(Algorithm::Vdn, Scenario::GridPredatorPrey);
    cfg.gamma = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let learner = ValueDecomposition::new(cfg, &dims, &mut rng);

    let mut data_rng = ChaCha8Rng::seed_from_u64(103);
    let episode =
        toy_episode(&mut data_rng, 2, 4, 5, vec![vec![0, 1], vec![2, 2]], vec![0.25, -0.5]);

    // with gamma = 0 every target is its reward; rebuild the loss from
    // per-step Q_tot evaluated independently
    let net = &learner.agent_nets()[0];
    let mut hidden = vec![net.initial_state(1), net.initial_state(1)];
    let mut expected = 0.0;
    for t in 0..2 {
        let mut q_tot = 0.0;
        for a in 0..2 {
            let mut row = episode.obs[t][a].clone();
            let mut last = vec![0.0; 3];
            if t > 0 {
                last[episode.actions[t - 1][a]] = 1.0;
            }
            row.extend(last);
            let mut id = vec![0.0; 2];
            id[a] = 1.0;
            row.extend(id);
            let features = Tensor::new(&[1, row.len()], row);
            let (q, h) = net.infer(&features, None, &hidden[a]);
            hidden[a] = h;
            q_tot += q.row(0)[episode.actions[t][a]];
        }
        let err = episode.rewards[t] - q_tot;
        expected += err * err;
    }
    expected /= 2.0;
    let got = learner.loss_on_batch(&[&episode]);
    assert!((got - expected).abs() < 1e-10, "loss {got} vs reconstruction {expected}");
}

#[test]
fn full_consensus_conditioned_loss_matches_finite_differences() {
    for algorithm in [Algorithm::ColaVdn, Algorithm::ColaQmix] {
        let dims = DimsEnv { n_agents: 2, obs_width: 4, n_actions: 3, state_width: 5 };
        let cfg = TrainConfig::new(algorithm, Scenario::GridPredatorPrey);
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        let mut learner = ValueDecomposition::new(cfg, &dims, &mut rng);

        let mut data_rng = ChaCha8Rng::seed_from_u64(105);
        let episodes = vec![
            toy_episode(&mut data_rng, 2, 4, 5, vec![vec![0, 2], vec![1, 1]], vec![0.5, -1.0]),
            toy_episode(&mut data_rng, 2, 4, 5, vec![vec![2, 2]], vec![2.0]),
        ];
        let batch: Vec<&Episode> = episodes.iter().collect();

        // consensus indices are constants of the loss; freeze the plan
        let plan = learner.consensus_plan(&batch);
        let (_, analytic) = learner.rl_loss_gradient(&batch, &plan);
        let x0 = learner.rl_parameter_vector();

        // stratified probe: every 97th coordinate touches all tensors
        let coords: Vec<usize> = (0..x0.len()).step_by(97).collect();
        let mut eval = |flat: &[f64]| {
            learner.set_rl_parameter_vector(flat);
            learner.loss_with_plan(&batch, &plan)
        };
        let err = finite_difference_check_at(&mut eval, &x0, &analytic, 1e-5, &coords);
        assert!(err < 1e-4, "{} full-loss rel err {err}", algorithm.name());
    }
}

#[test]
fn padded_steps_contribute_zero_to_the_loss() {
    let dims = DimsEnv { n_agents: 2, obs_width: 4, n_actions: 3, state_width: 5 };
    let cfg = TrainConfig::new(Algorithm::ColaVdn, Scenario::GridPredatorPrey);
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let learner = ValueDecomposition::new(cfg, &dims, &mut rng);

    let mut data_rng = ChaCha8Rng::seed_from_u64(107);
    let short = toy_episode(&mut data_rng, 2, 4, 5, vec![vec![0, 1]], vec![1.0]);
    let long = toy_episode(
        &mut data_rng,
        2,
        4,
        5,
        vec![vec![2, 0], vec![0, 0], vec![1, 2]],
        vec![0.0, 0.5, -0.25],
    );

    // the mixed batch pads the short episode; padded steps must not leak
    let mixed = learner.loss_on_batch(&[&short, &long]);
    let alone_short = learner.loss_on_batch(&[&short]);
    let alone_long = learner.loss_on_batch(&[&long]);
    let expected = (alone_short * 1.0 + alone_long * 3.0) / 4.0;
    assert!((mixed - expected).abs() < 1e-12, "mixed {mixed} vs {expected}");
}

#[test]
fn dead_agent_observation_content_never_reaches_any_loss() {
    let dims = DimsEnv { n_agents: 3, obs_width: 4, n_actions: 3, state_width: 5 };
    let mut cfg = TrainConfig::new(Algorithm::ColaVdn, Scenario::GridPredatorPrey);
    cfg.state_access = cola_algos::StateAccess::ObservationsOnly;
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let learner = ValueDecomposition::new(cfg, &dims, &mut rng);

    let mut data_rng = ChaCha8Rng::seed_from_u64(109);
    let mut episode =
        toy_episode(&mut data_rng, 3, 4, 5, vec![vec![0, 1, 2], vec![1, 1, 1]], vec![1.0, -1.0]);
    episode.alive[0][1] = false;
    episode.alive[1][2] = false;

    let rl_before = learner.loss_on_batch(&[&episode]);
    let views_before = learner.builder_views(&[&episode]);
    let cb_before = learner.builder.as_ref().unwrap().consensus_loss(&views_before);

    // garbage into every dead-flagged observation
    let mut perturbed = episode.clone();
    perturbed.obs[0][1] = vec![999.0, -42.0, 7.0, 3.0];
    perturbed.obs[1][2] = vec![-1e6, 2e6, 0.5, 0.125];

    let rl_after = learner.loss_on_batch(&[&perturbed]);
    let views_after = learner.builder_views(&[&perturbed]);
    let cb_after = learner.builder.as_ref().unwrap().consensus_loss(&views_after);

    assert_eq!(rl_before.to_bits(), rl_after.to_bits(), "RL loss changed");
    assert_eq!(cb_before.to_bits(), cb_after.to_bits(), "builder loss changed");
}

#[test]
fn rollouts_replay_deterministically_and_record_consensus() {
    let mut env = make_env(Scenario::GridPredatorPrey);
    let cfg = TrainConfig::new(Algorithm::ColaVdn, Scenario::GridPredatorPrey);
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let learner = ValueDecomposition::new(cfg, env.as_ref(), &mut rng);

    let run = |learner: &ValueDecomposition, env: &mut dyn Environment| {
        let mut policy_rng = ChaCha8Rng::seed_from_u64(111);
        learner.rollout_episode(env, 42, 1.0, &mut policy_rng)
    };
    let a = run(&learner, env.as_mut());
    let b = run(&learner, env.as_mut());
    assert_eq!(a.actions, b.actions);
    assert_eq!(a.rewards, b.rewards);
    assert_eq!(a.consensus, b.consensus);
    // epsilon = 1 is fully random, yet consensus is inferred and recorded
    assert_eq!(a.consensus.len(), a.len());
    assert!(a.consensus.iter().all(|step| step.len() == 3));
}

#[test]
fn updates_keep_builder_and_rl_parameters_disjoint() {
    let mut env = make_env(Scenario::GridPredatorPrey);
    let mut cfg = TrainConfig::new(Algorithm::ColaVdn, Scenario::GridPredatorPrey);
    cfg.check_isolation = true;
    cfg.batch_size = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(112);
    let mut learner = ValueDecomposition::new(cfg, env.as_ref(), &mut rng);

    let mut policy_rng = ChaCha8Rng::seed_from_u64(113);
    let episodes: Vec<Episode> = (0..4)
        .map(|i| learner.rollout_episode(env.as_mut(), i as u64, 1.0, &mut policy_rng))
        .collect();
    let batch: Vec<&Episode> = episodes.iter().collect();
    // the update itself asserts both directions when check_isolation is on
    let stats = learner.update(&batch);
    assert!(stats.rl_loss.is_finite());
    assert!(stats.cb_loss.unwrap().is_finite());

    // and the target sync never touches the builder either
    let builder_fp = learner.builder.as_ref().unwrap().state_fingerprint();
    learner.target_sync();
    assert_eq!(learner.builder.as_ref().unwrap().state_fingerprint(), builder_fp);
}

#[test]
fn target_sync_copies_and_then_freezes_targets() {
    let mut env = make_env(Scenario::GridPredatorPrey);
    let cfg = TrainConfig::new(Algorithm::Vdn, Scenario::GridPredatorPrey);
    let mut rng = ChaCha8Rng::seed_from_u64(114);
    let mut learner = ValueDecomposition::new(cfg, env.as_ref(), &mut rng);

    let mut policy_rng = ChaCha8Rng::seed_from_u64(115);
    let episodes: Vec<Episode> = (0..4)
        .map(|i| learner.rollout_episode(env.as_mut(), i as u64, 1.0, &mut policy_rng))
        .collect();
    let batch: Vec<&Episode> = episodes.iter().collect();

    learner.target_sync();
    let fp_after_sync = learner.rl_fingerprint();
    learner.update(&batch);
    // online parameters moved, so the joint fingerprint changed
    assert_ne!(learner.rl_fingerprint(), fp_after_sync);

    // a second sync makes target equal online again: syncing twice in a row
    // without updates is a fixed point
    learner.target_sync();
    let fp1 = learner.rl_fingerprint();
    learner.target_sync();
    assert_eq!(learner.rl_fingerprint(), fp1);
}
