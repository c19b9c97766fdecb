use cola_tensor::{Gradients, NodeId, Parameter, Tape, Tensor};


use crate::mlp::init_uniform;
use crate::Net;

/// A single GRU cell over batched rows.
///
/// Gates follow the convention where the update gate mixes the candidate
/// in: `h' = z * cand + (1 - z) * h`, so a hard-off update gate keeps the
/// old hidden state. Hidden values stay in (-1, 1).
pub struct GruCell {
    pub input_width: usize,
    pub hidden_width: usize,
    // input-to-hidden, hidden-to-hidden, bias per gate
    wr: Parameter,
    ur: Parameter,
    br: Parameter,
    wz: Parameter,
    uz: Parameter,
    bz: Parameter,
    wn: Parameter,
    un: Parameter,
    bn: Parameter,
}

pub struct GruBinding {
    wr: NodeId,
    ur: NodeId,
    br: NodeId,
    wz: NodeId,
    uz: NodeId,
    bz: NodeId,
    wn: NodeId,
    un: NodeId,
    bn: NodeId,
}

impl GruCell {
    pub fn new(name: &str, input_width: usize, hidden_width: usize, rng: &mut dyn rand::RngCore) -> Self {
        let w = |n: &str, rng: &mut dyn rand::RngCore| {
            Parameter::new(format!("{name}.{n}"), init_uniform(&[input_width, hidden_width], input_width, rng))
        };
        let u = |n: &str, rng: &mut dyn rand::RngCore| {
            Parameter::new(format!("{name}.{n}"), init_uniform(&[hidden_width, hidden_width], hidden_width, rng))
        };
        let b = |n: &str, rng: &mut dyn rand::RngCore| {
            Parameter::new(format!("{name}.{n}"), init_uniform(&[hidden_width], hidden_width, rng))
        };
        GruCell {
            input_width,
            hidden_width,
            wr: w("wr", rng),
            ur: u("ur", rng),
            br: b("br", rng),
            wz: w("wz", rng),
            uz: u("uz", rng),
            bz: b("bz", rng),
            wn: w("wn", rng),
            un: u("un", rng),
            bn: b("bn", rng),
        }
    }

    /// Zeroed hidden state for a batch; reset at episode start.
    pub fn initial_state(&self, batch: usize) -> Tensor {
        Tensor::zeros(&[batch, self.hidden_width])
    }

    pub fn bind(&self, tape: &mut Tape) -> GruBinding {
        GruBinding {
            wr: tape.leaf(self.wr.value.clone()),
            ur: tape.leaf(self.ur.value.clone()),
            br: tape.leaf(self.br.value.clone()),
            wz: tape.leaf(self.wz.value.clone()),
            uz: tape.leaf(self.uz.value.clone()),
            bz: tape.leaf(self.bz.value.clone()),
            wn: tape.leaf(self.wn.value.clone()),
            un: tape.leaf(self.un.value.clone()),
            bn: tape.leaf(self.bn.value.clone()),
        }
    }

    pub fn infer(&self, x: &Tensor, h: &Tensor) -> Tensor {
        assert!(
            x.cols() == self.input_width && h.cols() == self.hidden_width,
            "gru width mismatch: x {:?}, h {:?}, expected input {} hidden {}",
            x.shape(),
            h.shape(),
            self.input_width,
            self.hidden_width
        );
        let sig = |t: Tensor| t.map(|v| 1.0 / (1.0 + (-v).exp()));
        let lin = |w: &Parameter, u: &Parameter, b: &Parameter| {
            let mut y = x.matmul(&w.value).add(&h.matmul(&u.value));
            for i in 0..y.rows() {
                for (v, bv) in y.row_mut(i).iter_mut().zip(b.value.data()) {
                    *v += bv;
                }
            }
            y
        };
        let r = sig(lin(&self.wr, &self.ur, &self.br));
        let z = sig(lin(&self.wz, &self.uz, &self.bz));
        let rh = r.mul(h);
        let mut cand = x.matmul(&self.wn.value).add(&rh.matmul(&self.un.value));
        for i in 0..cand.rows() {
            for (v, bv) in cand.row_mut(i).iter_mut().zip(self.bn.value.data()) {
                *v += bv;
            }
        }
        let cand = cand.map(f64::tanh);
        // h' = z*cand + (1-z)*h
        let zc = z.mul(&cand);
        let keep = z.map(|v| 1.0 - v).mul(h);
        zc.add(&keep)
    }

    pub fn collect_grads(&mut self, b: &GruBinding, g: &Gradients) {
        for (p, id) in [
            (&mut self.wr, b.wr),
            (&mut self.ur, b.ur),
            (&mut self.br, b.br),
            (&mut self.wz, b.wz),
            (&mut self.uz, b.uz),
            (&mut self.bz, b.bz),
            (&mut self.wn, b.wn),
            (&mut self.un, b.un),
            (&mut self.bn, b.bn),
        ] {
            let shape = p.value.shape().to_vec();
            p.set_grad(g.get_or_zeros(id, &shape));
        }
    }
}

impl GruBinding {
    pub fn forward(&self, tape: &mut Tape, x: NodeId, h: NodeId) -> NodeId {
        let gate = |tape: &mut Tape, w, u, b| {
            let xi = tape.matmul(x, w);
            let hi = tape.matmul(h, u);
            let s = tape.add(xi, hi);
            tape.add_row(s, b)
        };
        let r = gate(tape, self.wr, self.ur, self.br);
        let r = tape.sigmoid(r);
        let z = gate(tape, self.wz, self.uz, self.bz);
        let z = tape.sigmoid(z);

        let rh = tape.mul(r, h);
        let xn = tape.matmul(x, self.wn);
        let hn = tape.matmul(rh, self.un);
        let cand = tape.add(xn, hn);
        let cand = tape.add_row(cand, self.bn);
        let cand = tape.tanh(cand);

        let zc = tape.mul(z, cand);
        let ones = tape.leaf(Tensor::full(tape.value(z).shape(), 1.0));
        let keep_gate = tape.sub(ones, z);
        let keep = tape.mul(keep_gate, h);
        tape.add(zc, keep)
    }
}

impl Net for GruCell {
    fn params(&self) -> Vec<&Parameter> {
        vec![
            &self.wr, &self.ur, &self.br, &self.wz, &self.uz, &self.bz, &self.wn, &self.un,
            &self.bn,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.wr,
            &mut self.ur,
            &mut self.br,
            &mut self.wz,
            &mut self.uz,
            &mut self.bz,
            &mut self.wn,
            &mut self.un,
            &mut self.bn,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_bias_cell(rng: &mut ChaCha8Rng) -> GruCell {
        let mut cell = GruCell::new("g", 3, 4, rng);
        for p in [&mut cell.br, &mut cell.bz, &mut cell.bn] {
            p.value = Tensor::zeros(&[4]);
        }
        cell
    }

    #[test]
    fn zero_input_zero_state_zero_biases_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = zero_bias_cell(&mut rng);
        let h = cell.infer(&Tensor::zeros(&[1, 3]), &cell.initial_state(1));
        assert_eq!(h, Tensor::zeros(&[1, 4]));
    }

    #[test]
    fn hard_off_update_gate_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cell = GruCell::new("g", 3, 4, &mut rng);
        cell.bz.value = Tensor::full(&[4], -50.0);
        let h0 = Tensor::new(&[1, 4], vec![0.3, -0.2, 0.5, 0.1]);
        let x = Tensor::new(&[1, 3], vec![0.7, -0.4, 0.9]);
        let h1 = cell.infer(&x, &h0);
        for (a, b) in h1.data().iter().zip(h0.data()) {
            assert!((a - b).abs() < 1e-9, "state drifted: {a} vs {b}");
        }
    }

    #[test]
    fn hidden_values_stay_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cell = GruCell::new("g", 3, 4, &mut rng);
        let mut h = cell.initial_state(2);
        let mut rng2 = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let x = Tensor::new(&[2, 3], (0..6).map(|_| rng2.gen_range(-5.0..5.0)).collect());
            h = cell.infer(&x, &h);
            assert!(h.data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cell = GruCell::new("g", 3, 4, &mut rng);
        let x = Tensor::new(&[2, 3], (0..6).map(|i| 0.3 * i as f64 - 0.8).collect());
        let h0 = Tensor::new(&[2, 4], (0..8).map(|i| 0.1 * i as f64 - 0.4).collect());
        let plain = cell.infer(&x, &h0);

        let mut tape = Tape::new();
        let b = cell.bind(&mut tape);
        let xn = tape.leaf(x);
        let hn = tape.leaf(h0);
        let h1 = b.forward(&mut tape, xn, hn);
        for (a, p) in tape.value(h1).data().iter().zip(plain.data()) {
            assert!((a - p).abs() < 1e-12);
        }
    }
}
