use cola_consensus::{AgentViews, ConsensusBuilder, ConsensusConfig};
use cola_envs::Environment;
use cola_nets::{fingerprint, Actor, Critic, Net};
use cola_tensor::{adam_step, OptimizerConfig, Parameter, Tape, Tensor};
use rand::Rng;

use crate::buffer::{Transition, TransitionBuffer};
use crate::config::{TrainConfig, CONSENSUS_EMBED_DIM, CRITIC_HIDDEN_WIDTH};

const ACTION_DIMS: usize = 2;

#[derive(Clone, Copy, Debug)]
pub struct MaddpgUpdateStats {
    pub critic_loss: f64,
    pub cb_loss: Option<f64>,
}

struct AdamOpt {
    cfg: OptimizerConfig,
    steps: u64,
}

impl AdamOpt {
    fn new(lr: f64) -> Self {
        AdamOpt { cfg: OptimizerConfig::adam(lr), steps: 0 }
    }

    fn step(&mut self, params: &mut [&mut Parameter]) {
        self.steps += 1;
        adam_step(params, &self.cfg, self.steps);
    }
}

/// Deterministic-policy actor-critic with one actor/critic pair per agent,
/// a centralized critic over all observations and actions, and optional
/// consensus conditioning of both.
pub struct Maddpg {
    pub cfg: TrainConfig,
    n_agents: usize,
    obs_width: usize,
    actors: Vec<Actor>,
    critics: Vec<Critic>,
    target_actors: Vec<Actor>,
    target_critics: Vec<Critic>,
    actor_opts: Vec<AdamOpt>,
    critic_opts: Vec<AdamOpt>,
    pub builder: Option<ConsensusBuilder>,
}

impl Maddpg {
    pub fn new(cfg: TrainConfig, env: &dyn Environment, rng: &mut dyn rand::RngCore) -> Self {
        cfg.validate();
        let n_agents = env.n_agents();
        let obs_width = env.obs_width();
        let consensus_slot = cfg
            .algorithm
            .uses_consensus()
            .then_some((cfg.consensus_classes, CONSENSUS_EMBED_DIM));
        // the critic's state proxy is every agent's observation concatenated
        let state_proxy_width = n_agents * obs_width;
        let joint_action_width = n_agents * ACTION_DIMS;

        let build_actor = |name: &str, rng: &mut dyn rand::RngCore| {
            Actor::new(name, obs_width, ACTION_DIMS, CRITIC_HIDDEN_WIDTH, consensus_slot, rng)
        };
        let build_critic = |name: &str, rng: &mut dyn rand::RngCore| {
            Critic::new(name, state_proxy_width, joint_action_width, CRITIC_HIDDEN_WIDTH, consensus_slot, rng)
        };
        let actors: Vec<Actor> =
            (0..n_agents).map(|a| build_actor(&format!("actor{a}"), rng)).collect();
        let critics: Vec<Critic> =
            (0..n_agents).map(|a| build_critic(&format!("critic{a}"), rng)).collect();
        let mut target_actors: Vec<Actor> =
            (0..n_agents).map(|a| build_actor(&format!("target_actor{a}"), rng)).collect();
        let mut target_critics: Vec<Critic> =
            (0..n_agents).map(|a| build_critic(&format!("target_critic{a}"), rng)).collect();
        for (t, o) in target_actors.iter_mut().zip(&actors) {
            crate::value_decomp::copy_params(t, o);
        }
        for (t, o) in target_critics.iter_mut().zip(&critics) {
            crate::value_decomp::copy_params(t, o);
        }

        let builder = cfg.algorithm.uses_consensus().then(|| {
            let mut ccfg = ConsensusConfig::new(cfg.consensus_classes, obs_width);
            ccfg.centering = cfg.centering;
            ccfg.learning_rate = cfg.consensus_lr;
            ConsensusBuilder::new(ccfg, rng)
        });

        let lr = cfg.rl_learning_rate;
        Maddpg {
            cfg,
            n_agents,
            obs_width,
            actors,
            critics,
            target_actors,
            target_critics,
            actor_opts: (0..n_agents).map(|_| AdamOpt::new(lr)).collect(),
            critic_opts: (0..n_agents).map(|_| AdamOpt::new(lr)).collect(),
            builder,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn consensus_of(&self, obs: &[Vec<f64>]) -> Vec<usize> {
        match &self.builder {
            Some(b) => obs.iter().map(|o| b.infer(o)).collect(),
            None => vec![0; self.n_agents],
        }
    }

    /// Deterministic action per agent plus the consensus indices used.
    /// `sigma > 0` adds Gaussian exploration noise, clamped to [-1, 1].
    pub fn act(
        &self,
        obs: &[Vec<f64>],
        sigma: f64,
        rng: &mut dyn rand::RngCore,
    ) -> (Vec<[f64; 2]>, Vec<usize>) {
        let consensus = self.consensus_of(obs);
        let mut actions = Vec::with_capacity(self.n_agents);
        for a in 0..self.n_agents {
            let x = Tensor::new(&[1, self.obs_width], obs[a].clone());
            let slot = self.builder.as_ref().map(|_| vec![consensus[a]]);
            let out = self.actors[a].infer(&x, slot.as_deref());
            let mut action = [out.get2(0, 0), out.get2(0, 1)];
            if sigma > 0.0 {
                for v in &mut action {
                    *v = (*v + sigma * gaussian(rng)).clamp(-1.0, 1.0);
                }
            }
            actions.push(action);
        }
        (actions, consensus)
    }

    /// One update round: per agent a critic TD step and an actor ascent
    /// step on its own minibatch, then polyak averaging of every target,
    /// then one builder step on a fresh minibatch of observation views.
    pub fn update(&mut self, buffer: &TransitionBuffer, rng: &mut dyn rand::RngCore) -> MaddpgUpdateStats {
        let builder_before =
            (self.cfg.check_isolation).then(|| self.builder.as_ref().map(|b| b.state_fingerprint()));

        let mut critic_losses = 0.0;
        for a in 0..self.n_agents {
            let batch = buffer.sample(self.cfg.batch_size, rng);
            critic_losses += self.critic_update(a, &batch);
            self.actor_update(a, &batch);
        }
        self.polyak_all();

        if let Some(Some(before)) = builder_before {
            assert!(
                self.builder.as_ref().unwrap().state_fingerprint() == before,
                "RL update modified consensus-builder parameters"
            );
        }

        let cb_loss = if self.builder.is_some() {
            let rl_before = self.cfg.check_isolation.then(|| self.rl_fingerprint());
            let batch = buffer.sample(self.cfg.batch_size, rng);
            let views: Vec<AgentViews> =
                batch.iter().map(|t| AgentViews::all_alive(t.obs.clone())).collect();
            let loss = self.builder.as_mut().unwrap().train_step(&views);
            if let Some(before) = rl_before {
                assert!(
                    self.rl_fingerprint() == before,
                    "builder update modified RL parameters"
                );
            }
            Some(loss)
        } else {
            None
        };

        MaddpgUpdateStats { critic_loss: critic_losses / self.n_agents as f64, cb_loss }
    }

    fn state_proxy(&self, batch: &[&Transition], next: bool) -> Tensor {
        let b = batch.len();
        let mut rows = Vec::with_capacity(b * self.n_agents * self.obs_width);
        for t in batch {
            let obs = if next { &t.next_obs } else { &t.obs };
            for o in obs {
                rows.extend_from_slice(o);
            }
        }
        Tensor::new(&[b, self.n_agents * self.obs_width], rows)
    }

    fn obs_of(&self, batch: &[&Transition], agent: usize, next: bool) -> Tensor {
        let b = batch.len();
        let mut rows = Vec::with_capacity(b * self.obs_width);
        for t in batch {
            let obs = if next { &t.next_obs } else { &t.obs };
            rows.extend_from_slice(&obs[agent]);
        }
        Tensor::new(&[b, self.obs_width], rows)
    }

    fn joint_actions(&self, batch: &[&Transition]) -> Tensor {
        let b = batch.len();
        let mut rows = Vec::with_capacity(b * self.n_agents * ACTION_DIMS);
        for t in batch {
            for a in &t.actions {
                rows.extend_from_slice(a);
            }
        }
        Tensor::new(&[b, self.n_agents * ACTION_DIMS], rows)
    }

    /// Consensus per agent for current or next observations; recomputed
    /// with the current student at update time.
    fn batch_consensus(&self, batch: &[&Transition], next: bool) -> Vec<Vec<usize>> {
        (0..self.n_agents)
            .map(|a| match &self.builder {
                Some(builder) => builder.infer_batch(&self.obs_of(batch, a, next)),
                None => vec![0; batch.len()],
            })
            .collect()
    }

    fn critic_update(&mut self, agent: usize, batch: &[&Transition]) -> f64 {
        let b = batch.len();
        let consensus_next = self.batch_consensus(batch, true);
        let consensus_now = self.batch_consensus(batch, false);

        // y = r + gamma * (1 - done) * Q'(z', c', u'_1..u'_n), u' from targets
        let next_proxy = self.state_proxy(batch, true);
        let mut next_joint = Tensor::zeros(&[b, self.n_agents * ACTION_DIMS]);
        for i in 0..self.n_agents {
            let obs_i = self.obs_of(batch, i, true);
            let slot = self.builder.as_ref().map(|_| consensus_next[i].as_slice());
            let act = self.target_actors[i].infer(&obs_i, slot);
            for e in 0..b {
                for d in 0..ACTION_DIMS {
                    next_joint.set2(e, i * ACTION_DIMS + d, act.get2(e, d));
                }
            }
        }
        let slot_a = self.builder.as_ref().map(|_| consensus_next[agent].as_slice());
        let q_next = self.target_critics[agent].infer(&next_proxy, slot_a, &next_joint);
        let mut y = Tensor::zeros(&[b, 1]);
        for (e, t) in batch.iter().enumerate() {
            let boot = if t.done { 0.0 } else { self.cfg.gamma * q_next.get2(e, 0) };
            y.set2(e, 0, t.reward + boot);
        }

        let mut tape = Tape::new();
        let binding = self.critics[agent].bind(&mut tape);
        let proxy = tape.leaf(self.state_proxy(batch, false));
        let joint = tape.leaf(self.joint_actions(batch));
        let slot = self.builder.as_ref().map(|_| consensus_now[agent].as_slice());
        let q = binding.forward(&mut tape, proxy, slot, joint);
        let y_node = tape.leaf(y);
        let err = tape.sub(q, y_node);
        let sq = tape.mul(err, err);
        let loss = tape.mean(sq);
        let value = tape.value(loss).item();
        assert!(value.is_finite(), "critic loss is not finite: {value}");

        let grads = tape.backward(loss);
        self.critics[agent].collect_grads(&binding, &grads);
        self.critic_opts[agent].step(&mut self.critics[agent].params_mut());
        value
    }

    fn actor_update(&mut self, agent: usize, batch: &[&Transition]) {
        let b = batch.len();
        let consensus_now = self.batch_consensus(batch, false);

        let mut tape = Tape::new();
        let actor_binding = self.actors[agent].bind(&mut tape);
        let critic_binding = self.critics[agent].bind(&mut tape);

        let obs_a = tape.leaf(self.obs_of(batch, agent, false));
        let slot = self.builder.as_ref().map(|_| consensus_now[agent].as_slice());
        let my_action = actor_binding.forward(&mut tape, obs_a, slot);

        // other agents' actions come from the buffer as constants
        let mut parts: Vec<cola_tensor::NodeId> = Vec::with_capacity(self.n_agents);
        for i in 0..self.n_agents {
            if i == agent {
                parts.push(my_action);
            } else {
                let mut rows = Vec::with_capacity(b * ACTION_DIMS);
                for t in batch {
                    rows.extend_from_slice(&t.actions[i]);
                }
                parts.push(tape.leaf(Tensor::new(&[b, ACTION_DIMS], rows)));
            }
        }
        let joint = tape.concat_cols(&parts);
        let proxy = tape.leaf(self.state_proxy(batch, false));
        let q = critic_binding.forward(&mut tape, proxy, slot, joint);
        let mean_q = tape.mean(q);
        let loss = tape.scale(mean_q, -1.0);
        assert!(tape.value(loss).item().is_finite(), "actor objective is not finite");

        let grads = tape.backward(loss);
        // only the actor trains here; the critic is a fixed differentiable map
        self.actors[agent].collect_grads(&actor_binding, &grads);
        self.actor_opts[agent].step(&mut self.actors[agent].params_mut());
    }

    /// `target <- rho * target + (1 - rho) * online` for every pair.
    pub fn polyak_all(&mut self) {
        let rho = self.cfg.polyak;
        for (t, o) in self.target_actors.iter_mut().zip(&self.actors) {
            polyak(t, o, rho);
        }
        for (t, o) in self.target_critics.iter_mut().zip(&self.critics) {
            polyak(t, o, rho);
        }
    }

    pub fn rl_params(&self) -> Vec<&Parameter> {
        let mut params: Vec<&Parameter> = Vec::new();
        for net in &self.actors {
            params.extend(net.params());
        }
        for net in &self.critics {
            params.extend(net.params());
        }
        for net in &self.target_actors {
            params.extend(net.params());
        }
        for net in &self.target_critics {
            params.extend(net.params());
        }
        params
    }

    pub fn rl_fingerprint(&self) -> u64 {
        fingerprint(&self.rl_params())
    }

    /// Online RL parameter count (actors and critics, no targets).
    pub fn rl_param_count(&self) -> usize {
        self.actors.iter().map(|a| a.param_count()).sum::<usize>()
            + self.critics.iter().map(|c| c.param_count()).sum::<usize>()
    }

    pub fn named_arrays(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> =
            self.rl_params().into_iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        if let Some(b) = &self.builder {
            out.extend(b.named_arrays());
        }
        out
    }
}

/// `target <- rho * target + (1 - rho) * online`, elementwise.
pub(crate) fn polyak<N: Net>(target: &mut N, online: &N, rho: f64) {
    let online_values: Vec<Tensor> = online.params().iter().map(|p| p.value.clone()).collect();
    for (t, o) in target.params_mut().into_iter().zip(online_values) {
        for (tv, &ov) in t.value.data_mut().iter_mut().zip(o.data()) {
            *tv = rho * *tv + (1.0 - rho) * ov;
        }
    }
}

/// Standard normal via Box-Muller on the run's deterministic stream.
fn gaussian(rng: &mut dyn rand::RngCore) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use cola_nets::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn polyak_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let mut online = Linear::new("o", 2, 2, &mut rng);
        let mut target = Linear::new("t", 2, 2, &mut rng);

        // online == target stays put
        crate::value_decomp::copy_params(&mut target, &online);
        let before: Vec<Tensor> = target.params().iter().map(|p| p.value.clone()).collect();
        polyak(&mut target, &online, 0.99);
        for (b, p) in before.iter().zip(target.params()) {
            assert_eq!(b, &p.value);
        }

        // target 0, online 1 -> 0.01
        for p in target.params_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        for p in online.params_mut() {
            p.value = Tensor::full(p.value.shape(), 1.0);
        }
        polyak(&mut target, &online, 0.99);
        for p in target.params() {
            for &v in p.value.data() {
                assert!((v - 0.01).abs() < 1e-15);
            }
        }

        // frozen online: geometric convergence
        for _ in 0..200 {
            polyak(&mut target, &online, 0.99);
        }
        let expected = 1.0 - 0.99f64.powi(201);
        for p in target.params() {
            for &v in p.value.data() {
                assert!((v - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gaussian_moments_are_sane() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = gaussian(&mut rng);
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
