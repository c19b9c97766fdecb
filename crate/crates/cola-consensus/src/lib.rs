//! The consensus builder: a student/teacher pair of MLP heads that maps
//! per-agent inputs to a distribution over K discrete classes.
//!
//! Training treats the agents' views of one timestep as augmentations of
//! the same underlying state and minimizes the pairwise cross-entropy
//! between teacher targets and student predictions over all ordered agent
//! pairs. The teacher is never trained by gradient; it trails the student
//! by exponential moving average, and its logits are centered by an EMA
//! vector before the sharp-temperature softmax to keep any single class
//! from taking over. Inference needs a single agent's input: the argmax of
//! the student distribution.

use cola_nets::{fingerprint, Activation, Mlp, MlpSpec, Net, OutputActivation};
use cola_tensor::{adam_step, OptimizerConfig, Parameter, Tape, Tensor};

/// Scalars and shapes of a consensus builder.
#[derive(Clone, Debug)]
pub struct ConsensusConfig {
    pub classes: usize,
    pub input_width: usize,
    pub hidden_widths: Vec<usize>,
    pub tau_student: f64,
    pub tau_teacher: f64,
    pub center_momentum: f64,
    pub teacher_momentum: f64,
    pub centering: bool,
    pub learning_rate: f64,
}

impl ConsensusConfig {
    pub fn new(classes: usize, input_width: usize) -> Self {
        assert!(classes >= 2, "consensus needs at least two classes");
        ConsensusConfig {
            classes,
            input_width,
            hidden_widths: vec![64, 64],
            tau_student: 0.1,
            tau_teacher: 0.04,
            center_momentum: 0.9,
            teacher_momentum: 0.996,
            centering: true,
            learning_rate: 1e-3,
        }
    }
}

/// All agents' builder inputs for one timestep.
#[derive(Clone, Debug)]
pub struct AgentViews {
    /// One feature vector per agent (dead agents may hold arbitrary data;
    /// they are excluded from the loss).
    pub features: Vec<Vec<f64>>,
    pub alive: Vec<bool>,
}

impl AgentViews {
    pub fn all_alive(features: Vec<Vec<f64>>) -> Self {
        let alive = vec![true; features.len()];
        AgentViews { features, alive }
    }
}

pub struct ConsensusBuilder {
    pub cfg: ConsensusConfig,
    student: Mlp,
    teacher: Mlp,
    center: Tensor,
    adam_steps: u64,
    optimizer: OptimizerConfig,
}

impl ConsensusBuilder {
    pub fn new(cfg: ConsensusConfig, rng: &mut dyn rand::RngCore) -> Self {
        let mut widths = vec![cfg.input_width];
        widths.extend_from_slice(&cfg.hidden_widths);
        widths.push(cfg.classes);
        let spec = MlpSpec::new(&widths, Activation::Tanh, OutputActivation::None);
        let student = Mlp::new("cb.student", spec.clone(), rng);
        // the teacher starts as an exact copy and only ever moves by EMA
        let mut teacher = Mlp::new("cb.teacher", spec, rng);
        for (t, s) in teacher.params_mut().into_iter().zip(student.params()) {
            t.value = s.value.clone();
        }
        let optimizer = OptimizerConfig::adam(cfg.learning_rate);
        let center = Tensor::zeros(&[cfg.classes]);
        ConsensusBuilder { cfg, student, teacher, center, adam_steps: 0, optimizer }
    }

    pub fn center(&self) -> &Tensor {
        &self.center
    }

    pub fn student_logits(&self, views: &Tensor) -> Tensor {
        self.student.infer(views)
    }

    pub fn teacher_logits(&self, views: &Tensor) -> Tensor {
        self.teacher.infer(views)
    }

    /// `Softmax(g_student(x) / tau_S)` rowwise; the student is never centered.
    pub fn student_probs(&self, views: &Tensor) -> Tensor {
        let logits = self.student_logits(views);
        let zeros = Tensor::zeros(&[self.cfg.classes]);
        cola_tensor::softmax_with_temperature(&logits, &zeros, self.cfg.tau_student)
    }

    /// `Softmax((g_teacher(x) - center) / tau_T)` rowwise.
    pub fn teacher_probs(&self, views: &Tensor) -> Tensor {
        let logits = self.teacher_logits(views);
        let offset = if self.cfg.centering {
            self.center.clone()
        } else {
            Tensor::zeros(&[self.cfg.classes])
        };
        cola_tensor::softmax_with_temperature(&logits, &offset, self.cfg.tau_teacher)
    }

    /// Discrete consensus for a single agent's input: argmax of the student
    /// distribution, ties broken by lowest index. Pure in (params, input).
    pub fn infer(&self, features: &[f64]) -> usize {
        let view = Tensor::new(&[1, self.cfg.input_width], features.to_vec());
        self.infer_batch(&view)[0]
    }

    /// Argmax per row of the student distribution. The temperature softmax
    /// is monotone, so the argmax of the raw logits is identical.
    pub fn infer_batch(&self, views: &Tensor) -> Vec<usize> {
        let logits = self.student_logits(views);
        (0..logits.rows()).map(|i| argmax(logits.row(i))).collect()
    }

    /// Mean over timesteps of the summed ordered-pair cross-entropy between
    /// teacher targets and student predictions, alive agents only.
    /// Timesteps with fewer than two alive agents contribute zero.
    pub fn consensus_loss(&self, batch: &[AgentViews]) -> f64 {
        let plan = BatchPlan::build(self, batch);
        if plan.pair_p.is_none() {
            return 0.0;
        }
        let (p, q_idx) = (plan.pair_p.as_ref().unwrap(), &plan.pair_student_rows);
        let student = self.student_probs(plan.views.as_ref().unwrap());
        let mut total = 0.0;
        for (i, &qi) in q_idx.iter().enumerate() {
            total += cola_tensor::cross_entropy(
                &Tensor::new(&[self.cfg.classes], p.row(i).to_vec()),
                &Tensor::new(&[self.cfg.classes], student.row(qi).to_vec()),
            );
        }
        total / batch.len() as f64
    }

    /// One training step: gradient descent on the student, then the center
    /// EMA over the batch's alive teacher logits, then the teacher EMA.
    /// Returns the loss. Nothing here reads or writes RL parameters.
    pub fn train_step(&mut self, batch: &[AgentViews]) -> f64 {
        let plan = BatchPlan::build(self, batch);

        let loss = if let (Some(views), Some(pair_p)) = (&plan.views, &plan.pair_p) {
            let value =
                self.student_backward(views, pair_p, &plan.pair_student_rows, batch.len());
            self.adam_steps += 1;
            adam_step(&mut self.student.params_mut(), &self.optimizer, self.adam_steps);
            value
        } else {
            0.0
        };

        if let Some(teacher_logits) = &plan.teacher_logits {
            self.update_center(teacher_logits);
        }
        self.update_teacher();
        loss
    }

    /// Loss and gradient into the students' `grad` fields; no value updates.
    fn student_backward(
        &mut self,
        views: &Tensor,
        pair_p: &Tensor,
        pair_student_rows: &[usize],
        n_steps: usize,
    ) -> f64 {
        let mut tape = Tape::new();
        let binding = self.student.bind(&mut tape);
        let views_node = tape.leaf(views.clone());
        let logits = binding.forward(&mut tape, views_node);
        let probs = tape.softmax_with_temperature(logits, None, self.cfg.tau_student);
        let gathered = tape.gather_rows(probs, pair_student_rows);
        let targets = tape.leaf(pair_p.clone());
        let ce = tape.cross_entropy_rows(targets, gathered);
        let total = tape.sum(ce);
        let loss = tape.scale(total, 1.0 / n_steps as f64);
        let value = tape.value(loss).item();
        assert!(value.is_finite(), "consensus loss is not finite: {value}");
        let grads = tape.backward(loss);
        self.student.collect_grads(&binding, &grads);
        value
    }

    /// Flattened student parameters, for gradient checking.
    pub fn student_parameter_vector(&self) -> Vec<f64> {
        self.student.params().iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn set_student_parameter_vector(&mut self, flat: &[f64]) {
        let mut off = 0;
        for p in self.student.params_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert!(off == flat.len(), "student parameter vector length mismatch");
    }

    /// Loss and its analytic gradient with respect to the flattened student
    /// parameters. Optimizer state, center, and teacher are untouched.
    pub fn consensus_loss_gradient(&mut self, batch: &[AgentViews]) -> (f64, Vec<f64>) {
        let plan = BatchPlan::build(self, batch);
        if let (Some(views), Some(pair_p)) = (&plan.views, &plan.pair_p) {
            let loss = self.student_backward(views, pair_p, &plan.pair_student_rows, batch.len());
            let grad =
                self.student.params().iter().flat_map(|p| p.grad.data().iter().copied()).collect();
            (loss, grad)
        } else {
            (0.0, vec![0.0; self.student_parameter_vector().len()])
        }
    }

    /// `center <- m_c * center + (1 - m_c) * mean(teacher logits)` over the
    /// given rows. An empty batch leaves the center unchanged.
    pub fn update_center(&mut self, teacher_logits: &Tensor) {
        if teacher_logits.rows() == 0 {
            return;
        }
        let k = self.cfg.classes;
        let rows = teacher_logits.rows();
        let mut mean = vec![0.0; k];
        for i in 0..rows {
            for (m, &v) in mean.iter_mut().zip(teacher_logits.row(i)) {
                *m += v;
            }
        }
        let m_c = self.cfg.center_momentum;
        for (c, m) in self.center.data_mut().iter_mut().zip(mean) {
            *c = m_c * *c + (1.0 - m_c) * m / rows as f64;
        }
    }

    /// `teacher <- m_t * teacher + (1 - m_t) * student`.
    pub fn update_teacher(&mut self) {
        let m_t = self.cfg.teacher_momentum;
        for (t, s) in self.teacher.params_mut().into_iter().zip(self.student.params()) {
            assert!(
                t.value.shape() == s.value.shape(),
                "teacher/student shape mismatch: {:?} vs {:?}",
                t.value.shape(),
                s.value.shape()
            );
            for (tv, &sv) in t.value.data_mut().iter_mut().zip(s.value.data()) {
                *tv = m_t * *tv + (1.0 - m_t) * sv;
            }
        }
    }

    /// Hash over everything the builder owns (student, teacher, center);
    /// used to prove RL updates leave the builder untouched.
    pub fn state_fingerprint(&self) -> u64 {
        let mut params: Vec<&Parameter> = self.student.params();
        params.extend(self.teacher.params());
        let center_param = Parameter::new("cb.center", self.center.clone());
        let base = fingerprint(&params);
        base ^ fingerprint(&[&center_param]).rotate_left(17)
    }

    /// Named arrays for checkpointing.
    pub fn named_arrays(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .student
            .params()
            .into_iter()
            .chain(self.teacher.params())
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        out.push(("cb.center".to_string(), self.center.clone()));
        out
    }

    pub fn student_param_count(&self) -> usize {
        self.student.param_count()
    }
}

/// Flattened alive views and the ordered-pair index plan for one batch.
struct BatchPlan {
    /// All alive views stacked rowwise, or None when there are none.
    views: Option<Tensor>,
    /// Teacher logits for every alive view (for the center EMA).
    teacher_logits: Option<Tensor>,
    /// Teacher target distribution per ordered pair.
    pair_p: Option<Tensor>,
    /// Row of the student output providing the prediction per ordered pair.
    pair_student_rows: Vec<usize>,
}

impl BatchPlan {
    fn build(builder: &ConsensusBuilder, batch: &[AgentViews]) -> BatchPlan {
        let width = builder.cfg.input_width;
        let mut rows: Vec<f64> = Vec::new();
        let mut view_index: Vec<Vec<Option<usize>>> = Vec::with_capacity(batch.len());
        let mut count = 0;
        for step in batch {
            assert!(
                step.features.len() == step.alive.len(),
                "agent count mismatch: {} features vs {} alive flags",
                step.features.len(),
                step.alive.len()
            );
            let mut indices = Vec::with_capacity(step.features.len());
            for (f, &alive) in step.features.iter().zip(&step.alive) {
                if alive {
                    assert!(
                        f.len() == width,
                        "view width {} does not match builder input width {width}",
                        f.len()
                    );
                    rows.extend_from_slice(f);
                    indices.push(Some(count));
                    count += 1;
                } else {
                    indices.push(None);
                }
            }
            view_index.push(indices);
        }
        if count == 0 {
            return BatchPlan {
                views: None,
                teacher_logits: None,
                pair_p: None,
                pair_student_rows: Vec::new(),
            };
        }
        let views = Tensor::new(&[count, width], rows);
        let teacher_logits = builder.teacher_logits(&views);
        let teacher_probs = builder.teacher_probs(&views);

        let mut pair_rows: Vec<f64> = Vec::new();
        let mut pair_student_rows = Vec::new();
        for indices in &view_index {
            let alive: Vec<usize> = indices.iter().flatten().copied().collect();
            if alive.len() < 2 {
                continue;
            }
            for &a in &alive {
                for &b in &alive {
                    if a == b {
                        continue;
                    }
                    pair_rows.extend_from_slice(teacher_probs.row(a));
                    pair_student_rows.push(b);
                }
            }
        }
        let pair_p = if pair_student_rows.is_empty() {
            None
        } else {
            Some(Tensor::new(&[pair_student_rows.len(), builder.cfg.classes], pair_rows))
        };
        BatchPlan { views: Some(views), teacher_logits: Some(teacher_logits), pair_p, pair_student_rows }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Entropy (nats) of the empirical class distribution of `indices`.
pub fn marginal_entropy(indices: &[usize], classes: usize) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; classes];
    for &i in indices {
        counts[i] += 1;
    }
    let n = indices.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Fraction of agreeing unordered agent pairs, averaged over timesteps
/// that have at least two entries.
pub fn pairwise_agreement(per_timestep: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    let mut steps = 0;
    for classes in per_timestep {
        let n = classes.len();
        if n < 2 {
            continue;
        }
        let mut agree = 0;
        let mut pairs = 0;
        for a in 0..n {
            for b in a + 1..n {
                pairs += 1;
                if classes[a] == classes[b] {
                    agree += 1;
                }
            }
        }
        total += agree as f64 / pairs as f64;
        steps += 1;
    }
    if steps == 0 {
        0.0
    } else {
        total / steps as f64
    }
}
