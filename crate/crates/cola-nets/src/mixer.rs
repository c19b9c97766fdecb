use cola_tensor::{Gradients, NodeId, Parameter, Tape, Tensor};


use crate::mlp::{Activation, Linear, Mlp, MlpBinding, MlpSpec, OutputActivation};
use crate::Net;

/// Monotone mixing network: hypernetworks map the global state to mixing
/// weights whose absolute value is taken, so every agent utility enters
/// `Q_tot` with a nonnegative slope.
pub struct QmixMixer {
    pub n_agents: usize,
    pub state_width: usize,
    pub embed_width: usize,
    hyper_w1: Mlp,
    hyper_b1: Linear,
    hyper_w2: Mlp,
    value: Mlp,
}

pub struct QmixMixerBinding {
    hyper_w1: MlpBinding,
    hyper_b1: crate::mlp::LinearBinding,
    hyper_w2: MlpBinding,
    value: MlpBinding,
    embed_width: usize,
}

impl QmixMixer {
    pub fn new(
        name: &str,
        n_agents: usize,
        state_width: usize,
        embed_width: usize,
        hyper_hidden: usize,
        rng: &mut dyn rand::RngCore,
    ) -> Self {
        let relu_mlp = |n: &str, widths: &[usize], rng: &mut dyn rand::RngCore| {
            Mlp::new(n, MlpSpec::new(widths, Activation::Relu, OutputActivation::None), rng)
        };
        QmixMixer {
            n_agents,
            state_width,
            embed_width,
            hyper_w1: relu_mlp(
                &format!("{name}.hyper_w1"),
                &[state_width, hyper_hidden, n_agents * embed_width],
                rng,
            ),
            hyper_b1: Linear::new(&format!("{name}.hyper_b1"), state_width, embed_width, rng),
            hyper_w2: relu_mlp(&format!("{name}.hyper_w2"), &[state_width, hyper_hidden, embed_width], rng),
            value: relu_mlp(&format!("{name}.value"), &[state_width, embed_width, 1], rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> QmixMixerBinding {
        QmixMixerBinding {
            hyper_w1: self.hyper_w1.bind(tape),
            hyper_b1: self.hyper_b1.bind(tape),
            hyper_w2: self.hyper_w2.bind(tape),
            value: self.value.bind(tape),
            embed_width: self.embed_width,
        }
    }

    pub fn infer(&self, agent_qs: &Tensor, state: &Tensor) -> Tensor {
        assert!(
            agent_qs.cols() == self.n_agents && state.cols() == self.state_width,
            "qmix input mismatch: qs {:?}, state {:?}",
            agent_qs.shape(),
            state.shape()
        );
        let b = agent_qs.rows();
        let m = self.embed_width;
        let w1 = self.hyper_w1.infer(state).map(f64::abs);
        let b1 = self.hyper_b1.infer(state);
        let w2 = self.hyper_w2.infer(state).map(f64::abs);
        let v = self.value.infer(state);

        let mut out = Tensor::zeros(&[b, 1]);
        for i in 0..b {
            let qs = agent_qs.row(i);
            let w1r = w1.row(i);
            let mut hidden = vec![0.0; m];
            for (l, &q) in qs.iter().enumerate() {
                for (hj, &w) in hidden.iter_mut().zip(&w1r[l * m..(l + 1) * m]) {
                    *hj += q * w;
                }
            }
            for (hj, &bv) in hidden.iter_mut().zip(b1.row(i)) {
                let s = *hj + bv;
                *hj = if s > 0.0 { s } else { s.exp_m1() };
            }
            let mut tot = v.get2(i, 0);
            for (hj, &w) in hidden.iter().zip(w2.row(i)) {
                tot += hj * w;
            }
            out.set2(i, 0, tot);
        }
        out
    }

    pub fn collect_grads(&mut self, b: &QmixMixerBinding, g: &Gradients) {
        self.hyper_w1.collect_grads(&b.hyper_w1, g);
        self.hyper_b1.collect_grads(&b.hyper_b1, g);
        self.hyper_w2.collect_grads(&b.hyper_w2, g);
        self.value.collect_grads(&b.value, g);
    }
}

impl QmixMixerBinding {
    pub fn forward(&self, tape: &mut Tape, agent_qs: NodeId, state: NodeId) -> NodeId {
        let m = self.embed_width;
        let w1 = self.hyper_w1.forward(tape, state);
        let w1 = tape.abs(w1);
        let b1 = self.hyper_b1.forward(tape, state);
        let mixed = tape.rowwise_vec_mat(agent_qs, w1, m);
        let hidden = tape.add(mixed, b1);
        let hidden = tape.elu(hidden);

        let w2 = self.hyper_w2.forward(tape, state);
        let w2 = tape.abs(w2);
        let top = tape.rowwise_vec_mat(hidden, w2, 1);
        let v = self.value.forward(tape, state);
        tape.add(top, v)
    }
}

impl Net for QmixMixer {
    fn params(&self) -> Vec<&Parameter> {
        let mut p = self.hyper_w1.params();
        p.extend(self.hyper_b1.params());
        p.extend(self.hyper_w2.params());
        p.extend(self.value.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.hyper_w1.params_mut();
        p.extend(self.hyper_b1.params_mut());
        p.extend(self.hyper_w2.params_mut());
        p.extend(self.value.params_mut());
        p
    }
}

/// Parameter-free additive mixer: `Q_tot` is exactly the sum of agent Qs.
pub struct VdnMixer;

impl VdnMixer {
    pub fn forward(&self, tape: &mut Tape, agent_qs: NodeId) -> NodeId {
        tape.row_sum(agent_qs)
    }

    pub fn infer(&self, agent_qs: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(&[agent_qs.rows(), 1]);
        for i in 0..agent_qs.rows() {
            out.set2(i, 0, agent_qs.row(i).iter().sum());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vdn_sums_exactly() {
        let qs = Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]);
        assert_eq!(VdnMixer.infer(&qs).item(), 6.0);
        let zeros = Tensor::zeros(&[1, 4]);
        assert_eq!(VdnMixer.infer(&zeros).item(), 0.0);
    }

    #[test]
    fn vdn_joint_greedy_equals_per_agent_greedy() {
        // Q_1 = [1, 2], Q_2 = [3, 0]: joint max is (action 1, action 0).
        let q1 = [1.0, 2.0];
        let q2 = [3.0, 0.0];
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (i, a) in q1.iter().enumerate() {
            for (j, b) in q2.iter().enumerate() {
                if a + b > best.2 {
                    best = (i, j, a + b);
                }
            }
        }
        assert_eq!((best.0, best.1), (1, 0));
    }

    #[test]
    fn zeroed_hypernets_reduce_to_final_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let mut mixer = QmixMixer::new("mix", 3, 5, 4, 6, &mut rng);
        for p in mixer.params_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        // value head output bias only: elu(0) = 0 through the mixing path
        let bias = 2.5;
        let last = mixer.value.params_mut().pop().unwrap();
        last.value = Tensor::new(&[1], vec![bias]);

        let state = Tensor::new(&[2, 5], vec![0.3; 10]);
        for qs in [Tensor::new(&[2, 3], vec![1.0; 6]), Tensor::new(&[2, 3], vec![-7.0, 3.0, 0.0, 5.0, 5.0, 5.0])] {
            let out = mixer.infer(&qs, &state);
            assert!((out.get2(0, 0) - bias).abs() < 1e-12);
            assert!((out.get2(1, 0) - bias).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mixer = QmixMixer::new("mix", 3, 5, 4, 6, &mut rng);
        let qs = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.0, 1.0, -0.5]);
        let state = Tensor::new(&[2, 5], (0..10).map(|i| 0.2 * i as f64 - 1.0).collect());
        let plain = mixer.infer(&qs, &state);

        let mut tape = Tape::new();
        let b = mixer.bind(&mut tape);
        let qn = tape.leaf(qs);
        let sn = tape.leaf(state);
        let out = b.forward(&mut tape, qn, sn);
        for (a, p) in tape.value(out).data().iter().zip(plain.data()) {
            assert!((a - p).abs() < 1e-12);
        }
    }
}
