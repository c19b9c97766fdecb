use cola_tensor::{Gradients, NodeId, Parameter, Tape, Tensor};


use crate::mlp::init_uniform;
use crate::Net;

/// `classes x dim` lookup table mapping a discrete consensus index to a
/// dense vector. Gradients accumulate only in looked-up rows.
pub struct EmbeddingTable {
    pub classes: usize,
    pub dim: usize,
    table: Parameter,
}

pub struct EmbeddingBinding {
    table: NodeId,
}

impl EmbeddingTable {
    pub fn new(name: &str, classes: usize, dim: usize, rng: &mut dyn rand::RngCore) -> Self {
        EmbeddingTable {
            classes,
            dim,
            table: Parameter::new(format!("{name}.table"), init_uniform(&[classes, dim], dim, rng)),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> EmbeddingBinding {
        EmbeddingBinding { table: tape.leaf(self.table.value.clone()) }
    }

    pub fn infer(&self, indices: &[usize]) -> Tensor {
        let mut out = Tensor::zeros(&[indices.len(), self.dim]);
        for (i, &c) in indices.iter().enumerate() {
            assert!(c < self.classes, "consensus index {c} out of range [0, {})", self.classes);
            out.row_mut(i).copy_from_slice(self.table.value.row(c));
        }
        out
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        self.table.value.row_mut(c)
    }

    pub fn collect_grads(&mut self, b: &EmbeddingBinding, g: &Gradients) {
        let shape = self.table.value.shape().to_vec();
        self.table.set_grad(g.get_or_zeros(b.table, &shape));
    }
}

impl EmbeddingBinding {
    pub fn lookup(&self, tape: &mut Tape, indices: &[usize]) -> NodeId {
        let classes = tape.value(self.table).rows();
        for &c in indices {
            assert!(c < classes, "consensus index {c} out of range [0, {classes})");
        }
        tape.gather_rows(self.table, indices)
    }
}

impl Net for EmbeddingTable {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.table]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.table]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lookup_is_exact_row_retrieval() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let table = EmbeddingTable::new("e", 4, 3, &mut rng);
        let got = table.infer(&[2, 0, 2]);
        assert_eq!(got.row(0), table.table.value.row(2));
        assert_eq!(got.row(1), table.table.value.row(0));
        assert_eq!(got.row(2), table.table.value.row(2));
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn lookup_rejects_out_of_range_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let table = EmbeddingTable::new("e", 4, 3, &mut rng);
        let _ = table.infer(&[4]);
    }

    #[test]
    fn gradients_only_touch_looked_up_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut table = EmbeddingTable::new("e", 4, 3, &mut rng);
        let mut tape = Tape::new();
        let b = table.bind(&mut tape);
        let picked = b.lookup(&mut tape, &[1, 1]);
        let s = tape.sum(picked);
        let grads = tape.backward(s);
        table.collect_grads(&b, &grads);
        let g = &table.table.grad;
        assert_eq!(g.row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(g.row(1), &[2.0, 2.0, 2.0]);
        assert_eq!(g.row(2), &[0.0, 0.0, 0.0]);
        assert_eq!(g.row(3), &[0.0, 0.0, 0.0]);
    }
}
