//! Finite-difference checks through each network against the tape gradients.

use cola_nets::{Actor, AgentQNet, AgentQNetSpec, Critic, GruCell, Net, QmixMixer};
use cola_tensor::{finite_difference_check, Parameter, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

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

#[test]
fn gru_three_step_unroll_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut cell = GruCell::new("g", 3, 4, &mut rng);
    let xs: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut rng, &[2, 3])).collect();
    let w = rand_tensor(&mut rng, &[2, 4]);

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

    // finite differences run through the plain-inference path, which also
    // pins the two forward implementations to each other
    let x0 = flatten(&cell.params());
    let mut eval = |flat: &[f64]| {
        unflatten(&mut cell.params_mut(), flat);
        let mut h = cell.initial_state(2);
        for x in &xs {
            h = cell.infer(x, &h);
        }
        h.mul(&w).sum()
    };
    let err = finite_difference_check(&mut eval, &x0, &analytic, H);
    assert!(err < TOL, "gru unroll rel err {err}");
}

#[test]
fn qmix_mixer_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut mixer = QmixMixer::new("mix", 3, 5, 4, 6, &mut rng);
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
    let mut eval = |flat: &[f64]| {
        unflatten(&mut mixer.params_mut(), flat);
        mixer.infer(&qs, &state).data().iter().sum()
    };
    let err = finite_difference_check(&mut eval, &x0, &analytic, H);
    assert!(err < TOL, "qmix mixer rel err {err}");
}

#[test]
fn agent_qnet_two_steps_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let spec = AgentQNetSpec {
        feature_width: 5,
        n_actions: 3,
        encoder_width: 6,
        hidden_width: 6,
        consensus: Some((4, 2)),
    };
    let mut net = AgentQNet::new("a", spec, &mut rng);
    let f1 = rand_tensor(&mut rng, &[2, 5]);
    let f2 = rand_tensor(&mut rng, &[2, 5]);
    let consensus = [vec![1usize, 3], vec![0usize, 2]];

    let analytic = {
        let mut tape = Tape::new();
        let b = net.bind(&mut tape);
        let h0 = tape.leaf(net.initial_state(2));
        let x1 = tape.leaf(f1.clone());
        let (q1, h1) = b.forward(&mut tape, x1, Some(&consensus[0]), h0);
        let x2 = tape.leaf(f2.clone());
        let (q2, _) = b.forward(&mut tape, x2, Some(&consensus[1]), h1);
        let s1 = tape.sum(q1);
        let s2 = tape.sum(q2);
        let loss = tape.add(s1, s2);
        let grads = tape.backward(loss);
        net.collect_grads(&b, &grads);
        flat_grads(&net.params())
    };

    let x0 = flatten(&net.params());
    let mut eval = |flat: &[f64]| {
        unflatten(&mut net.params_mut(), flat);
        let h0 = net.initial_state(2);
        let (q1, h1) = net.infer(&f1, Some(&consensus[0]), &h0);
        let (q2, _) = net.infer(&f2, Some(&consensus[1]), &h1);
        q1.sum() + q2.sum()
    };
    let err = finite_difference_check(&mut eval, &x0, &analytic, H);
    assert!(err < TOL, "agent qnet rel err {err}");
}

#[test]
fn actor_and_critic_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let mut actor = Actor::new("pi", 5, 2, 6, Some((3, 2)), &mut rng);
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
    let mut eval = |flat: &[f64]| {
        unflatten(&mut actor.params_mut(), flat);
        actor.infer(&obs, Some(&consensus)).mul(&w).sum()
    };
    let err = finite_difference_check(&mut eval, &x0, &analytic, H);
    assert!(err < TOL, "actor rel err {err}");

    let mut critic = Critic::new("q", 6, 4, 6, Some((3, 2)), &mut rng);
    let state = rand_tensor(&mut rng, &[2, 6]);
    let joint = rand_tensor(&mut rng, &[2, 4]);
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
    let mut eval = |flat: &[f64]| {
        unflatten(&mut critic.params_mut(), flat);
        critic.infer(&state, Some(&consensus), &joint).sum()
    };
    let err = finite_difference_check(&mut eval, &x0, &analytic, H);
    assert!(err < TOL, "critic rel err {err}");
}
