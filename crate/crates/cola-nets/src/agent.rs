use cola_tensor::{Gradients, NodeId, Parameter, Tape, Tensor};


use crate::embedding::{EmbeddingBinding, EmbeddingTable};
use crate::gru::{GruBinding, GruCell};
use crate::mlp::Linear;
use crate::Net;

/// Widths for an agent Q-network.
///
/// `feature_width` covers everything the trainer concatenates per agent
/// (observation, last-action one-hot, agent-id one-hot). When `consensus`
/// is set, a `(classes, dim)` embedding is appended to the features and its
/// table trains with the rest of the network; the consensus index itself
/// never carries gradient. When unset the network has no consensus slot.
#[derive(Clone, Debug)]
pub struct AgentQNetSpec {
    pub feature_width: usize,
    pub n_actions: usize,
    pub encoder_width: usize,
    pub hidden_width: usize,
    pub consensus: Option<(usize, usize)>,
}

pub struct AgentQNet {
    pub spec: AgentQNetSpec,
    embed: Option<EmbeddingTable>,
    enc: Linear,
    gru: GruCell,
    head: Linear,
}

pub struct AgentQNetBinding {
    embed: Option<EmbeddingBinding>,
    enc: crate::mlp::LinearBinding,
    gru: GruBinding,
    head: crate::mlp::LinearBinding,
}

impl AgentQNet {
    pub fn new(name: &str, spec: AgentQNetSpec, rng: &mut dyn rand::RngCore) -> Self {
        let embed = spec
            .consensus
            .map(|(k, e)| EmbeddingTable::new(&format!("{name}.consensus"), k, e, rng));
        let enc_in = spec.feature_width + spec.consensus.map_or(0, |(_, e)| e);
        AgentQNet {
            enc: Linear::new(&format!("{name}.enc"), enc_in, spec.encoder_width, rng),
            gru: GruCell::new(&format!("{name}.gru"), spec.encoder_width, spec.hidden_width, rng),
            head: Linear::new(&format!("{name}.head"), spec.hidden_width, spec.n_actions, rng),
            embed,
            spec,
        }
    }

    pub fn initial_state(&self, batch: usize) -> Tensor {
        self.gru.initial_state(batch)
    }

    pub fn bind(&self, tape: &mut Tape) -> AgentQNetBinding {
        AgentQNetBinding {
            embed: self.embed.as_ref().map(|e| e.bind(tape)),
            enc: self.enc.bind(tape),
            gru: self.gru.bind(tape),
            head: self.head.bind(tape),
        }
    }

    /// Plain forward for rollouts and target evaluation.
    pub fn infer(
        &self,
        features: &Tensor,
        consensus: Option<&[usize]>,
        hidden: &Tensor,
    ) -> (Tensor, Tensor) {
        let input = match (&self.embed, consensus) {
            (Some(table), Some(idx)) => concat_cols_plain(features, &table.infer(idx)),
            (None, None) => features.clone(),
            _ => panic!("consensus input does not match the network's consensus slot"),
        };
        let enc = self.enc.infer(&input).map(|v| v.max(0.0));
        let h = self.gru.infer(&enc, hidden);
        let q = self.head.infer(&h);
        (q, h)
    }

    pub fn collect_grads(&mut self, b: &AgentQNetBinding, g: &Gradients) {
        if let (Some(table), Some(bind)) = (&mut self.embed, &b.embed) {
            table.collect_grads(bind, g);
        }
        self.enc.collect_grads(&b.enc, g);
        self.gru.collect_grads(&b.gru, g);
        self.head.collect_grads(&b.head, g);
    }
}

impl AgentQNetBinding {
    /// One step: consensus embedded and concatenated, encoded, passed
    /// through the GRU, projected to per-action values.
    pub fn forward(
        &self,
        tape: &mut Tape,
        features: NodeId,
        consensus: Option<&[usize]>,
        hidden: NodeId,
    ) -> (NodeId, NodeId) {
        let input = match (&self.embed, consensus) {
            (Some(table), Some(idx)) => {
                let emb = table.lookup(tape, idx);
                tape.concat_cols(&[features, emb])
            }
            (None, None) => features,
            _ => panic!("consensus input does not match the network's consensus slot"),
        };
        let enc = self.enc.forward(tape, input);
        let enc = tape.relu(enc);
        let h = self.gru.forward(tape, enc, hidden);
        let q = self.head.forward(tape, h);
        (q, h)
    }
}

pub(crate) fn concat_cols_plain(a: &Tensor, b: &Tensor) -> Tensor {
    assert!(a.rows() == b.rows(), "concat rows mismatch: {:?} vs {:?}", a.shape(), b.shape());
    let (rows, ca, cb) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[rows, ca + cb]);
    for i in 0..rows {
        out.row_mut(i)[..ca].copy_from_slice(a.row(i));
        out.row_mut(i)[ca..].copy_from_slice(b.row(i));
    }
    out
}

impl Net for AgentQNet {
    fn params(&self) -> Vec<&Parameter> {
        let mut p = Vec::new();
        if let Some(e) = &self.embed {
            p.extend(e.params());
        }
        p.extend(self.enc.params());
        p.extend(self.gru.params());
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = Vec::new();
        if let Some(e) = &mut self.embed {
            p.extend(e.params_mut());
        }
        p.extend(self.enc.params_mut());
        p.extend(self.gru.params_mut());
        p.extend(self.head.params_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> AgentQNetSpec {
        AgentQNetSpec {
            feature_width: 6,
            n_actions: 4,
            encoder_width: 8,
            hidden_width: 8,
            consensus: Some((3, 2)),
        }
    }

    #[test]
    fn zero_weights_yield_bias_q_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut net = AgentQNet::new("a", spec(), &mut rng);
        for p in net.params_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        net.head.b.value = Tensor::new(&[4], vec![1.0, -2.0, 0.5, 3.0]);
        let feats = Tensor::new(&[1, 6], vec![0.3; 6]);
        let (q, _) = net.infer(&feats, Some(&[1]), &net.initial_state(1));
        assert_eq!(q.data(), &[1.0, -2.0, 0.5, 3.0]);
    }

    #[test]
    fn identical_embedding_rows_make_consensus_indistinguishable() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut net = AgentQNet::new("a", spec(), &mut rng);
        let row: Vec<f64> = net.embed.as_ref().unwrap().infer(&[0]).data().to_vec();
        net.embed.as_mut().unwrap().row_mut(1).copy_from_slice(&row);
        let feats = Tensor::new(&[1, 6], vec![0.2; 6]);
        let h = net.initial_state(1);
        let (q0, _) = net.infer(&feats, Some(&[0]), &h);
        let (q1, _) = net.infer(&feats, Some(&[1]), &h);
        assert_eq!(q0, q1);
    }

    #[test]
    fn distinct_embedding_rows_change_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut differing = 0;
        for _ in 0..100 {
            let net = AgentQNet::new("a", spec(), &mut rng);
            let feats = Tensor::new(&[1, 6], vec![0.2; 6]);
            let h = net.initial_state(1);
            let (q0, _) = net.infer(&feats, Some(&[0]), &h);
            let (q1, _) = net.infer(&feats, Some(&[2]), &h);
            if q0 != q1 {
                differing += 1;
            }
        }
        assert_eq!(differing, 100);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn out_of_range_consensus_panics() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let net = AgentQNet::new("a", spec(), &mut rng);
        let feats = Tensor::new(&[1, 6], vec![0.2; 6]);
        let _ = net.infer(&feats, Some(&[3]), &net.initial_state(1));
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let net = AgentQNet::new("a", spec(), &mut rng);
        let feats = Tensor::new(&[2, 6], (0..12).map(|i| 0.1 * i as f64 - 0.5).collect());
        let h0 = net.initial_state(2);
        let (q_plain, h_plain) = net.infer(&feats, Some(&[0, 2]), &h0);

        let mut tape = Tape::new();
        let b = net.bind(&mut tape);
        let f = tape.leaf(feats);
        let h = tape.leaf(h0);
        let (q, h1) = b.forward(&mut tape, f, Some(&[0, 2]), h);
        for (a, p) in tape.value(q).data().iter().zip(q_plain.data()) {
            assert!((a - p).abs() < 1e-12);
        }
        for (a, p) in tape.value(h1).data().iter().zip(h_plain.data()) {
            assert!((a - p).abs() < 1e-12);
        }
    }
}
