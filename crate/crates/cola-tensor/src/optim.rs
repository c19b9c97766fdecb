use crate::tensor::Tensor;

/// A trainable tensor: value, last gradient, and per-optimizer moments.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub state: OptimizerState,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter { name: name.into(), value, grad, state: OptimizerState::Empty }
    }

    pub fn zero_grad(&mut self) {
        self.grad = Tensor::zeros(self.value.shape());
    }

    /// Replaces the stored gradient; shape must match the value.
    pub fn set_grad(&mut self, grad: Tensor) {
        assert!(
            grad.shape() == self.value.shape(),
            "gradient shape {:?} does not match parameter `{}` {:?}",
            grad.shape(),
            self.name,
            self.value.shape()
        );
        self.grad = grad;
    }
}

/// Moment tensors owned by a parameter, lazily shaped on first step.
#[derive(Clone, Debug)]
pub enum OptimizerState {
    Empty,
    Rmsprop { mean_sq: Tensor },
    Adam { m: Tensor, v: Tensor },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Rmsprop,
    Adam,
}

/// Update rule and its constants.
#[derive(Clone, Copy, Debug)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// RMSProp squared-gradient decay.
    pub decay: f64,
    /// Adam first/second moment decays.
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn rmsprop(learning_rate: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be > 0");
        OptimizerConfig {
            kind: OptimizerKind::Rmsprop,
            learning_rate,
            decay: 0.99,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 1e-5,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be > 0");
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Applies one update to every parameter from its stored gradient.
    ///
    /// `step` is the 1-based step count used for Adam bias correction; pass
    /// the same counter the caller increments once per optimizer call.
    pub fn step(&self, params: &mut [&mut Parameter], step: u64) {
        match self.kind {
            OptimizerKind::Rmsprop => rmsprop_step(params, self),
            OptimizerKind::Adam => adam_step(params, self, step),
        }
    }
}

fn check_grad(p: &Parameter) {
    assert!(
        p.grad.all_finite(),
        "non-finite gradient for parameter `{}`",
        p.name
    );
}

/// RMSProp: `s <- decay*s + (1-decay)*g^2; w <- w - lr * g / sqrt(s + eps)`.
pub fn rmsprop_step(params: &mut [&mut Parameter], cfg: &OptimizerConfig) {
    for p in params.iter_mut() {
        check_grad(p);
        if !matches!(p.state, OptimizerState::Rmsprop { .. }) {
            p.state = OptimizerState::Rmsprop { mean_sq: Tensor::zeros(p.value.shape()) };
        }
        let OptimizerState::Rmsprop { mean_sq } = &mut p.state else { unreachable!() };
        for i in 0..p.value.len() {
            let g = p.grad.data()[i];
            let s = &mut mean_sq.data_mut()[i];
            *s = cfg.decay * *s + (1.0 - cfg.decay) * g * g;
            p.value.data_mut()[i] -= cfg.learning_rate * g / (*s + cfg.epsilon).sqrt();
        }
    }
}

/// Adam with bias correction; `step` starts at 1.
pub fn adam_step(params: &mut [&mut Parameter], cfg: &OptimizerConfig, step: u64) {
    assert!(step >= 1, "adam step counter is 1-based");
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for p in params.iter_mut() {
        check_grad(p);
        if !matches!(p.state, OptimizerState::Adam { .. }) {
            p.state = OptimizerState::Adam {
                m: Tensor::zeros(p.value.shape()),
                v: Tensor::zeros(p.value.shape()),
            };
        }
        let OptimizerState::Adam { m, v } = &mut p.state else { unreachable!() };
        for i in 0..p.value.len() {
            let g = p.grad.data()[i];
            let mi = &mut m.data_mut()[i];
            let vi = &mut v.data_mut()[i];
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            p.value.data_mut()[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_noop() {
        let mut p = Parameter::new("w", Tensor::new(&[2], vec![1.0, -2.0]));
        let before = p.value.clone();
        let cfg = OptimizerConfig::rmsprop(0.0005);
        rmsprop_step(&mut [&mut p], &cfg);
        assert_eq!(p.value, before);

        let mut q = Parameter::new("w", Tensor::new(&[2], vec![1.0, -2.0]));
        let cfg = OptimizerConfig::adam(0.01);
        adam_step(&mut [&mut q], &cfg, 1);
        assert_eq!(q.value, before);
    }

    #[test]
    fn rmsprop_first_step_matches_update_rule() {
        let mut p = Parameter::new("w", Tensor::scalar(0.0));
        p.set_grad(Tensor::scalar(1.0));
        let cfg = OptimizerConfig::rmsprop(0.0005);
        rmsprop_step(&mut [&mut p], &cfg);
        let expected = -0.0005 / (0.01f64 + 1e-5).sqrt();
        assert!((p.value.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_bias_corrected() {
        let mut p = Parameter::new("w", Tensor::scalar(0.0));
        p.set_grad(Tensor::scalar(1.0));
        let cfg = OptimizerConfig::adam(0.01);
        adam_step(&mut [&mut p], &cfg, 1);
        // mhat = vhat = 1 after correction, so the step is -lr/(1 + eps).
        assert!((p.value.item() + 0.01).abs() < 1e-9);
    }

    #[test]
    #[should_panic(expected = "non-finite gradient for parameter `w`")]
    fn nan_gradient_aborts_naming_parameter() {
        let mut p = Parameter::new("w", Tensor::scalar(0.0));
        p.set_grad(Tensor::scalar(f64::NAN));
        let cfg = OptimizerConfig::adam(0.01);
        adam_step(&mut [&mut p], &cfg, 1);
    }
}
