use rand::Rng;

/// Linear interpolation from `start` to `end` over `steps`, then constant.
#[derive(Clone, Copy, Debug)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: u64,
}

impl LinearSchedule {
    pub fn new(start: f64, end: f64, steps: u64) -> Self {
        LinearSchedule { start, end, steps }
    }

    pub fn value(&self, t: u64) -> f64 {
        if self.steps == 0 || t >= self.steps {
            return self.end;
        }
        let frac = t as f64 / self.steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// With probability `epsilon` a uniform action, otherwise the greedy one
/// (ties broken toward the lowest index).
pub fn epsilon_greedy(q_values: &[f64], epsilon: f64, rng: &mut dyn rand::RngCore) -> usize {
    assert!((0.0..=1.0).contains(&epsilon), "epsilon must be in [0, 1], got {epsilon}");
    assert!(!q_values.is_empty());
    if epsilon > 0.0 && rng.gen_range(0.0..1.0) < epsilon {
        return rng.gen_range(0..q_values.len());
    }
    let mut best = 0;
    for (i, &v) in q_values.iter().enumerate() {
        if v > q_values[best] {
            best = i;
        }
    }
    best
}
