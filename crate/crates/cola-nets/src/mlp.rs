use rand::Rng;
use cola_tensor::{Gradients, NodeId, Parameter, Tape, Tensor};


use crate::Net;

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
pub fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut dyn rand::RngCore) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    None,
    Tanh,
}

/// Layer widths plus activations; `widths[0]` is the input width.
#[derive(Clone, Debug)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: OutputActivation,
}

impl MlpSpec {
    pub fn new(widths: &[usize], hidden: Activation, output: OutputActivation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        assert!(widths.iter().all(|&w| w > 0), "MLP widths must be positive: {widths:?}");
        MlpSpec { widths: widths.to_vec(), hidden, output }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

pub struct Linear {
    pub w: Parameter,
    pub b: Parameter,
}

pub struct LinearBinding {
    pub w: NodeId,
    pub b: NodeId,
}

impl Linear {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut dyn rand::RngCore) -> Self {
        Linear {
            w: Parameter::new(format!("{name}.w"), init_uniform(&[fan_in, fan_out], fan_in, rng)),
            b: Parameter::new(format!("{name}.b"), init_uniform(&[fan_out], fan_in, rng)),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> LinearBinding {
        LinearBinding {
            w: tape.leaf(self.w.value.clone()),
            b: tape.leaf(self.b.value.clone()),
        }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = x.matmul(&self.w.value);
        let b = self.b.value.data();
        for i in 0..y.rows() {
            for (v, &bv) in y.row_mut(i).iter_mut().zip(b) {
                *v += bv;
            }
        }
        y
    }

    pub fn collect_grads(&mut self, binding: &LinearBinding, grads: &Gradients) {
        self.w.set_grad(grads.get_or_zeros(binding.w, self.w.value.shape()));
        self.b.set_grad(grads.get_or_zeros(binding.b, self.b.value.shape()));
    }
}

impl LinearBinding {
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let y = tape.matmul(x, self.w);
        tape.add_row(y, self.b)
    }
}

pub struct Mlp {
    pub spec: MlpSpec,
    layers: Vec<Linear>,
}

pub struct MlpBinding {
    layers: Vec<LinearBinding>,
    hidden: Activation,
    output: OutputActivation,
}

impl Mlp {
    pub fn new(name: &str, spec: MlpSpec, rng: &mut dyn rand::RngCore) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.l{i}"), w[0], w[1], rng))
            .collect();
        Mlp { spec, layers }
    }

    pub fn bind(&self, tape: &mut Tape) -> MlpBinding {
        MlpBinding {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
            hidden: self.spec.hidden,
            output: self.spec.output,
        }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.infer(&h);
            if i < last {
                h = match self.spec.hidden {
                    Activation::Relu => h.map(|v| v.max(0.0)),
                    Activation::Tanh => h.map(f64::tanh),
                };
            } else if self.spec.output == OutputActivation::Tanh {
                h = h.map(f64::tanh);
            }
        }
        h
    }

    pub fn collect_grads(&mut self, binding: &MlpBinding, grads: &Gradients) {
        for (layer, b) in self.layers.iter_mut().zip(&binding.layers) {
            layer.collect_grads(b, grads);
        }
    }
}

impl MlpBinding {
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h);
            if i < last {
                h = match self.hidden {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                };
            } else if self.output == OutputActivation::Tanh {
                h = tape.tanh(h);
            }
        }
        h
    }
}

impl Net for Linear {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w, &mut self.b]
    }
}

impl Net for Mlp {
    fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = MlpSpec::new(&[4, 8, 3], Activation::Tanh, OutputActivation::None);
        let mlp = Mlp::new("m", spec, &mut rng);
        let x = Tensor::new(&[2, 4], (0..8).map(|i| i as f64 * 0.1 - 0.4).collect());

        let plain = mlp.infer(&x);
        let mut tape = Tape::new();
        let b = mlp.bind(&mut tape);
        let xn = tape.leaf(x);
        let y = b.forward(&mut tape, xn);
        assert_eq!(tape.value(y), &plain);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = init_uniform(&[64, 64], 64, &mut rng);
        let bound = 1.0 / 8.0;
        assert!(t.data().iter().all(|v| v.abs() < bound));
    }
}
