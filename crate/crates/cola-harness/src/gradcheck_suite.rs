use cola_algos::{Algorithm, Episode, TrainConfig, ValueDecomposition};
use cola_consensus::{AgentViews, ConsensusBuilder, ConsensusConfig};
use cola_envs::{ActionSpec, Environment, JointAction, Scenario, StepOutcome};
use cola_nets::{Activation, Actor, Critic, GruCell, Mlp, MlpSpec, Net, OutputActivation, QmixMixer};
use cola_tensor::{finite_difference_check_at, Parameter, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const H: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckItem {
    pub name: String,
    pub max_rel_err: f64,
}

impl GradCheckItem {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOLERANCE
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub items: Vec<GradCheckItem>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.items.iter().all(GradCheckItem::passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&format!(
                "{:<36} max rel err {:>12.3e}  {}\n",
                item.name,
                item.max_rel_err,
                if item.passed() { "ok" } else { "FAIL" }
            ));
        }
        out.push_str(&format!(
            "gradcheck: {} items, tolerance {:.0e}: {}\n",
            self.items.len(),
            GRADCHECK_TOLERANCE,
            if self.all_passed() { "all ok" } else { "FAILURES" }
        ));
        out
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn flatten(params: &[&Parameter]) -> Vec<f64> {
    params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
}

fn unflatten(params: &mut [&mut Parameter], flat: &[f64]) {
    let mut off = 0;
    for p in params.iter_mut() {
        let n = p.value.len();
        p.value.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

fn flat_grads(params: &[&Parameter]) -> Vec<f64> {
    params.iter().flat_map(|p| p.grad.data().iter().copied()).collect()
}

fn all_coords(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Runs every item and reports the worst relative error per item. The
/// negative control (enabled by tests) injects a deliberately corrupted
/// analytic gradient that must fail.
pub fn run_gradcheck(with_corrupted_control: bool) -> GradCheckReport {
    let mut items = Vec::new();

    items.push(check_mlp());
    items.push(check_gru_unrolled());
    items.push(check_qmix_mixer());
    items.push(check_actor());
    items.push(check_critic());
    items.push(check_consensus_loss());
    items.push(check_full_td_loss(Algorithm::Vdn, "vdn_td_loss"));
    items.push(check_full_td_loss(Algorithm::ColaVdn, "cola_vdn_td_loss"));
    items.push(check_full_td_loss(Algorithm::ColaQmix, "consensus_conditioned_td_loss"));

    if with_corrupted_control {
        items.push(corrupted_control());
    }
    GradCheckReport { items }
}

fn check_mlp() -> GradCheckItem {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let spec = MlpSpec::new(&[5, 8, 3], Activation::Tanh, OutputActivation::None);
    let mut mlp = Mlp::new("m", spec, &mut rng);
    let x = rand_tensor(&mut rng, &[3, 5]);
    let w = rand_tensor(&mut rng, &[3, 3]);

    let analytic = {
        let mut tape = Tape::new();
        let b = mlp.bind(&mut tape);
        let xn = tape.leaf(x.clone());
        let y = b.forward(&mut tape, xn);
        let wn = tape.leaf(w.clone());
        let prod = tape.mul(y, wn);
        let loss = tape.sum(prod);
        let grads = tape.backward(loss);
        mlp.collect_grads(&b, &grads);
        flat_grads(&mlp.params())
    };
    let x0 = flatten(&mlp.params());
    let coords = all_coords(x0.len());
    let mut eval = |flat: &[f64]| {
        unflatten(&mut mlp.params_mut(), flat);
        mlp.infer(&x).mul(&w).sum()
    };
    let err = finite_difference_check_at(&mut eval, &x0, &analytic, H, &coords);
    GradCheckItem { name: "mlp_tanh".to_string(), max_rel_err: err }
}

fn check_gru_unrolled() -> GradCheckItem {
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let mut cell = GruCell::new("g", 4, 5, &mut rng);
    let xs: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut rng, &[2, 4])).collect();
    let w = rand_tensor(&mut rng, &[2, 5]);

    let analytic = {
        let mut tape = Tape::new();
        let b = cell.bind(&mut tape);
        let mut h = tape.leaf(cell.initial_state(2));
        for x in &xs {
            let xn = tape.leaf(x.clone());
            h = b.forward(&mut tape, xn, h);
        }
        let wn = tape.leaf(w.clone());
        let prod = tape.mul(h, wn);
        let loss = tape.sum(prod);
        let grads = tape.backward(loss);
        cell.collect_grads(&b, &grads);
        flat_grads(&cell.params())
    };
    let x0 = flatten(&cell.params());
    let coords = all_coords(x0.len());
    let mut eval = |flat: &[f64]| {
        unflatten(&mut cell.params_mut(), flat);
        let mut h = cell.initial_state(2);
        for x in &xs {
            h = cell.infer(x, &h);
        }
        h.mul(&w).sum()
    };
    let err = finite_difference_check_at(&mut eval, &x0, &analytic, H, &coords);
    GradCheckItem { name: "gru_3step_unroll".to_string(), max_rel_err: err }
}

fn check_qmix_mixer() -> GradCheckItem {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut mixer = QmixMixer::new("mix", 3, 5, 4, 8, &mut rng);
    let qs = rand_tensor(&mut rng, &[2, 3]);
    let state = rand_tensor(&mut rng, &[2, 5]);

    let analytic = {
        let mut tape = Tape::new();
        let b = mixer.bind(&mut tape);
        let qn = tape.leaf(qs.clone());
        let sn = tape.leaf(state.clone());
        let out = b.forward(&mut tape, qn, sn);
        let loss = tape.sum(out);
        let grads = tape.backward(loss);
        mixer.collect_grads(&b, &grads);
        flat_grads(&mixer.params())
    };
    let x0 = flatten(&mixer.params());
    let coords = all_coords(x0.len());
    let mut eval = |flat: &[f64]| {
        unflatten(&mut mixer.params_mut(), flat);
        mixer.infer(&qs, &state).data().iter().sum()
    };
    let err = finite_difference_check_at(&mut eval, &x0, &analytic, H, &coords);
    GradCheckItem { name: "qmix_mixer".to_string(), max_rel_err: err }
}

fn check_actor() -> GradCheckItem {
    let mut rng = ChaCha8Rng::seed_from_u64(203);
    let mut actor = Actor::new("pi", 5, 2, 8, Some((3, 2)), &mut rng);
    let obs = rand_tensor(&mut rng, &[2, 5]);
    let w = rand_tensor(&mut rng, &[2, 2]);
    let consensus = vec![0usize, 2];

    let analytic = {
        let mut tape = Tape::new();
        let b = actor.bind(&mut tape);
        let on = tape.leaf(obs.clone());
        let act = b.forward(&mut tape, on, Some(&consensus));
        let wn = tape.leaf(w.clone());
        let prod = tape.mul(act, wn);
        let loss = tape.sum(prod);
        let grads = tape.backward(loss);
        actor.collect_grads(&b, &grads);
        flat_grads(&actor.params())
    };
    let x0 = flatten(&actor.params());
    let coords = all_coords(x0.len());
    let mut eval = |flat: &[f64]| {
        unflatten(&mut actor.params_mut(), flat);
        actor.infer(&obs, Some(&consensus)).mul(&w).sum()
    };
    let err = finite_difference_check_at(&mut eval, &x0, &analytic, H, &coords);
    GradCheckItem { name: "actor".to_string(), max_rel_err: err }
}

fn check_critic() -> GradCheckItem {
    let mut rng = ChaCha8Rng::seed_from_u64(204);
    let mut critic = Critic::new("q", 6, 4, 8, Some((3, 2)), &mut rng);
    let state = rand_tensor(&mut rng, &[2, 6]);
    let joint = rand_tensor(&mut rng, &[2, 4]);
    let consensus = vec![1usize, 1];

    let analytic = {
        let mut tape = Tape::new();
        let b = critic.bind(&mut tape);
        let sn = tape.leaf(state.clone());
        let jn = tape.leaf(joint.clone());
        let q = b.forward(&mut tape, sn, Some(&consensus), jn);
        let loss = tape.sum(q);
        let grads = tape.backward(loss);
        critic.collect_grads(&b, &grads);
        flat_grads(&critic.params())
    };
    let x0 = flatten(&critic.params());
    let coords = all_coords(x0.len());
    let mut eval = |flat: &[f64]| {
        unflatten(&mut critic.params_mut(), flat);
        critic.infer(&state, Some(&consensus), &joint).sum()
    };
    let err = finite_difference_check_at(&mut eval, &x0, &analytic, H, &coords);
    GradCheckItem { name: "critic".to_string(), max_rel_err: err }
}

fn check_consensus_loss() -> GradCheckItem {
    let mut rng = ChaCha8Rng::seed_from_u64(205);
    let mut cfg = ConsensusConfig::new(4, 3);
    cfg.hidden_widths = vec![8];
    let mut builder = ConsensusBuilder::new(cfg, &mut rng);
    let batch: Vec<AgentViews> = (0..3)
        .map(|_| {
            AgentViews::all_alive(
                (0..3).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
            )
        })
        .collect();

    let (_, analytic) = builder.consensus_loss_gradient(&batch);
    let x0 = builder.student_parameter_vector();
    let coords = all_coords(x0.len());
    let mut eval = |flat: &[f64]| {
        builder.set_student_parameter_vector(flat);
        builder.consensus_loss(&batch)
    };
    let err = finite_difference_check_at(&mut eval, &x0, &analytic, H, &coords);
    GradCheckItem { name: "consensus_pairwise_loss".to_string(), max_rel_err: err }
}

/// Dimension stub for the toy TD-loss batches.
struct DimsEnv;

impl Environment for DimsEnv {
    fn n_agents(&self) -> usize {
        2
    }
    fn obs_width(&self) -> usize {
        4
    }
    fn state_width(&self) -> usize {
        5
    }
    fn action_spec(&self) -> ActionSpec {
        ActionSpec::Discrete { n: 3 }
    }
    fn episode_limit(&self) -> usize {
        10
    }
    fn reset(&mut self, _seed: u64) -> Vec<Vec<f64>> {
        vec![vec![0.0; 4]; 2]
    }
    fn state(&self) -> Vec<f64> {
        vec![0.0; 5]
    }
    fn alive(&self) -> Vec<bool> {
        vec![true; 2]
    }
    fn step(&mut self, _action: &JointAction) -> StepOutcome {
        panic!("dimensions only")
    }
}

/// Full TD loss (agents, embedding, mixer) on a 2-agent, 2-step toy batch,
/// with the consensus plan frozen; probes a stride of coordinates through
/// every parameter tensor.
fn check_full_td_loss(algorithm: Algorithm, name: &str) -> GradCheckItem {
    let cfg = TrainConfig::new(algorithm, Scenario::GridPredatorPrey);
    let mut rng = ChaCha8Rng::seed_from_u64(206);
    let mut learner = ValueDecomposition::new(cfg, &DimsEnv, &mut rng);

    let mut data_rng = ChaCha8Rng::seed_from_u64(207);
    let mut rand_obs = |n: usize| -> Vec<f64> { (0..n).map(|_| data_rng.gen_range(-1.0..1.0)).collect() };
    let episode = Episode {
        obs: (0..3).map(|_| vec![rand_obs(4), rand_obs(4)]).collect(),
        state: (0..3).map(|_| rand_obs(5)).collect(),
        alive: vec![vec![true; 2]; 3],
        actions: vec![vec![0, 2], vec![1, 1]],
        consensus: vec![vec![0; 2]; 2],
        rewards: vec![0.5, -1.0],
        captured: false,
    };
    let batch = vec![&episode];

    let plan = learner.consensus_plan(&batch);
    let (_, analytic) = learner.rl_loss_gradient(&batch, &plan);
    let x0 = learner.rl_parameter_vector();
    let coords: Vec<usize> = (0..x0.len()).step_by(89).collect();
    let mut eval = |flat: &[f64]| {
        learner.set_rl_parameter_vector(flat);
        learner.loss_with_plan(&batch, &plan)
    };
    let err = finite_difference_check_at(&mut eval, &x0, &analytic, H, &coords);
    GradCheckItem { name: name.to_string(), max_rel_err: err }
}

/// Negative control: a gradient corrupted on purpose must be caught.
fn corrupted_control() -> GradCheckItem {
    let x0 = vec![0.7, -0.3];
    let wrong: Vec<f64> = x0.iter().map(|v| 2.0 * v * 1.5).collect();
    let mut f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let coords = all_coords(2);
    let err = finite_difference_check_at(&mut f, &x0, &wrong, H, &coords);
    GradCheckItem { name: "negative_control_corrupted".to_string(), max_rel_err: err }
}
