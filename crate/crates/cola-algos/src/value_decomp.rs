use cola_consensus::{AgentViews, ConsensusBuilder, ConsensusConfig};
use cola_envs::{Environment, JointAction};
use cola_nets::{
    fingerprint, AgentQNet, AgentQNetBinding, AgentQNetSpec, Net, QmixMixer, QmixMixerBinding,
    VdnMixer,
};
use cola_tensor::{rmsprop_step, NodeId, OptimizerConfig, Parameter, Tape, Tensor};

use crate::buffer::Episode;
use crate::config::{
    ConsensusInput, StateAccess, TrainConfig, AGENT_ENCODER_WIDTH, AGENT_GRU_WIDTH,
    CONSENSUS_EMBED_DIM, MIXER_EMBED_WIDTH, MIXER_HYPER_HIDDEN,
};
use crate::schedule::epsilon_greedy;

/// Losses of one update round.
#[derive(Clone, Copy, Debug)]
pub struct VdUpdateStats {
    pub rl_loss: f64,
    pub cb_loss: Option<f64>,
}

/// QMIX/VDN learner over episode replay, optionally consensus-conditioned.
pub struct ValueDecomposition {
    pub cfg: TrainConfig,
    n_agents: usize,
    obs_width: usize,
    mixer_state_width: usize,
    n_actions: usize,
    feature_width: usize,
    agents: Vec<AgentQNet>,
    target_agents: Vec<AgentQNet>,
    mixers: Option<(QmixMixer, QmixMixer)>,
    pub builder: Option<ConsensusBuilder>,
}

impl ValueDecomposition {
    pub fn new(cfg: TrainConfig, env: &dyn Environment, rng: &mut dyn rand::RngCore) -> Self {
        cfg.validate();
        let n_agents = env.n_agents();
        let obs_width = env.obs_width();
        let n_actions = match env.action_spec() {
            cola_envs::ActionSpec::Discrete { n } => n,
            _ => panic!("value decomposition needs discrete actions"),
        };
        let feature_width = obs_width + n_actions + n_agents;
        let consensus_slot = cfg
            .algorithm
            .uses_consensus()
            .then_some((cfg.consensus_classes, CONSENSUS_EMBED_DIM));
        let spec = AgentQNetSpec {
            feature_width,
            n_actions,
            encoder_width: AGENT_ENCODER_WIDTH,
            hidden_width: AGENT_GRU_WIDTH,
            consensus: consensus_slot,
        };
        let n_nets = if cfg.share_agent_net { 1 } else { n_agents };
        let agents: Vec<AgentQNet> = (0..n_nets)
            .map(|i| AgentQNet::new(&format!("agent{i}"), spec.clone(), rng))
            .collect();
        let mut target_agents: Vec<AgentQNet> = (0..n_nets)
            .map(|i| AgentQNet::new(&format!("target_agent{i}"), spec.clone(), rng))
            .collect();
        for (t, o) in target_agents.iter_mut().zip(&agents) {
            copy_params(t, o);
        }

        let mixer_state_width = match cfg.state_access {
            StateAccess::Full => env.state_width(),
            StateAccess::ObservationsOnly => n_agents * obs_width,
        };
        let mixers = cfg.algorithm.uses_qmix_mixer().then(|| {
            let online = QmixMixer::new(
                "mixer",
                n_agents,
                mixer_state_width,
                MIXER_EMBED_WIDTH,
                MIXER_HYPER_HIDDEN,
                rng,
            );
            let mut target = QmixMixer::new(
                "target_mixer",
                n_agents,
                mixer_state_width,
                MIXER_EMBED_WIDTH,
                MIXER_HYPER_HIDDEN,
                rng,
            );
            copy_params(&mut target, &online);
            (online, target)
        });

        let builder = cfg.algorithm.uses_consensus().then(|| {
            let input_width = match cfg.consensus_input {
                ConsensusInput::Observation => obs_width,
                ConsensusInput::HiddenState => AGENT_GRU_WIDTH,
            };
            let mut ccfg = ConsensusConfig::new(cfg.consensus_classes, input_width);
            ccfg.centering = cfg.centering;
            ccfg.learning_rate = cfg.consensus_lr;
            ConsensusBuilder::new(ccfg, rng)
        });

        ValueDecomposition {
            cfg,
            n_agents,
            obs_width,
            mixer_state_width,
            n_actions,
            feature_width,
            agents,
            target_agents,
            mixers,
            builder,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn net_index(&self, agent: usize) -> usize {
        if self.cfg.share_agent_net {
            0
        } else {
            agent
        }
    }

    /// Per-agent feature row: masked observation, previous action one-hot,
    /// agent-id one-hot. Dead or padded entries contribute zeros, so stored
    /// observation content cannot leak into any loss.
    fn feature_row(&self, obs: &[f64], alive: bool, last_action: Option<usize>, agent: usize) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.feature_width);
        if alive {
            row.extend_from_slice(obs);
        } else {
            row.extend(std::iter::repeat(0.0).take(self.obs_width));
        }
        let mut action_onehot = vec![0.0; self.n_actions];
        if let Some(a) = last_action {
            action_onehot[a] = 1.0;
        }
        row.extend(action_onehot);
        let mut id = vec![0.0; self.n_agents];
        id[agent] = 1.0;
        row.extend(id);
        row
    }

    /// Consensus class per agent for one timestep of a live rollout.
    fn rollout_consensus(&self, obs: &[Vec<f64>], hidden: &[Tensor]) -> Vec<usize> {
        let builder = self.builder.as_ref().expect("consensus disabled");
        (0..self.n_agents)
            .map(|a| match self.cfg.consensus_input {
                ConsensusInput::Observation => builder.infer(&obs[a]),
                ConsensusInput::HiddenState => builder.infer(hidden[a].row(0)),
            })
            .collect()
    }

    /// Runs one episode with epsilon-greedy actions. Consensus is inferred
    /// by each agent from its own input and recorded even when epsilon
    /// forces a random action.
    pub fn rollout_episode(
        &self,
        env: &mut dyn Environment,
        env_seed: u64,
        epsilon: f64,
        rng: &mut dyn rand::RngCore,
    ) -> Episode {
        let obs0 = env.reset(env_seed);
        let mut episode = Episode {
            obs: vec![obs0],
            state: vec![env.state()],
            alive: vec![env.alive()],
            actions: Vec::new(),
            consensus: Vec::new(),
            rewards: Vec::new(),
            captured: false,
        };
        let mut hidden: Vec<Tensor> =
            (0..self.n_agents).map(|a| self.agents[self.net_index(a)].initial_state(1)).collect();
        let mut last_actions: Vec<Option<usize>> = vec![None; self.n_agents];

        loop {
            let t = episode.rewards.len();
            let obs = &episode.obs[t];
            let alive = &episode.alive[t];
            let consensus = if self.builder.is_some() {
                self.rollout_consensus(obs, &hidden)
            } else {
                vec![0; self.n_agents]
            };
            let mut actions = Vec::with_capacity(self.n_agents);
            for a in 0..self.n_agents {
                let row = self.feature_row(&obs[a], alive[a], last_actions[a], a);
                let features = Tensor::new(&[1, self.feature_width], row);
                let net = &self.agents[self.net_index(a)];
                let slot = self.builder.as_ref().map(|_| vec![consensus[a]]);
                let (q, h) = net.infer(&features, slot.as_deref(), &hidden[a]);
                hidden[a] = h;
                actions.push(epsilon_greedy(q.row(0), epsilon, rng));
            }
            let outcome = env.step(&JointAction::Discrete(actions.clone()));
            for (slot, &a) in last_actions.iter_mut().zip(&actions) {
                *slot = Some(a);
            }
            episode.actions.push(actions);
            episode.consensus.push(consensus);
            episode.rewards.push(outcome.reward);
            episode.obs.push(outcome.observations);
            episode.state.push(env.state());
            episode.alive.push(env.alive());
            episode.captured |= outcome.captured;
            if outcome.done {
                return episode;
            }
        }
    }

    /// Mixer input at one timestep: global state or concatenated masked
    /// observations, depending on the access mode.
    fn mixer_state_row(&self, episode: &Episode, t: usize) -> Vec<f64> {
        match self.cfg.state_access {
            StateAccess::Full => episode.state[t].clone(),
            StateAccess::ObservationsOnly => {
                let mut row = Vec::with_capacity(self.mixer_state_width);
                for a in 0..self.n_agents {
                    if episode.alive[t][a] {
                        row.extend_from_slice(&episode.obs[t][a]);
                    } else {
                        row.extend(std::iter::repeat(0.0).take(self.obs_width));
                    }
                }
                row
            }
        }
    }

    /// One gradient step on the sampled episodes, then one builder step on
    /// the same batch. Consensus indices are recomputed with the current
    /// student and treated as constants by the RL loss.
    pub fn update(&mut self, batch: &[&Episode]) -> VdUpdateStats {
        assert!(!batch.is_empty(), "empty update batch");
        let builder_before = self.builder.as_ref().map(|b| b.state_fingerprint());

        let (rl_loss, views) = self.rl_step(batch);

        if self.cfg.check_isolation {
            if let (Some(before), Some(b)) = (builder_before, self.builder.as_ref()) {
                assert!(
                    b.state_fingerprint() == before,
                    "RL update modified consensus-builder parameters"
                );
            }
        }

        let cb_loss = if self.builder.is_some() {
            let rl_before = self.cfg.check_isolation.then(|| self.rl_fingerprint());
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
        VdUpdateStats { rl_loss, cb_loss }
    }

    /// Squared TD error on a batch, without updating anything.
    pub fn loss_on_batch(&self, batch: &[&Episode]) -> f64 {
        self.forward_loss(batch, None, None).0
    }

    /// The per-step consensus sequence an update on this batch would use
    /// (step-major, then agent, then episode row).
    pub fn consensus_plan(&self, batch: &[&Episode]) -> Vec<Vec<Vec<usize>>> {
        self.forward_loss(batch, None, None).2
    }

    /// The builder inputs an update on this batch would train on.
    pub fn builder_views(&self, batch: &[&Episode]) -> Vec<AgentViews> {
        self.forward_loss(batch, None, None).1
    }

    /// Loss under a frozen consensus plan; the differentiable map checked
    /// by finite differences, where indices are constants by contract.
    pub fn loss_with_plan(&self, batch: &[&Episode], plan: &[Vec<Vec<usize>>]) -> f64 {
        self.forward_loss(batch, None, Some(plan)).0
    }

    /// Flattened online RL parameters (agents plus mixer).
    pub fn rl_parameter_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.online_rl_params() {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    pub fn set_rl_parameter_vector(&mut self, flat: &[f64]) {
        let mut off = 0;
        for p in self.online_rl_params_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert!(off == flat.len(), "RL parameter vector length mismatch");
    }

    /// Loss and analytic gradient with respect to the flattened online RL
    /// parameters under a frozen consensus plan. No values change.
    pub fn rl_loss_gradient(
        &mut self,
        batch: &[&Episode],
        plan: &[Vec<Vec<usize>>],
    ) -> (f64, Vec<f64>) {
        let mut bundle = TapeBundle::default();
        let (loss_value, _) = {
            let (loss, views, _) = self.forward_loss(batch, Some(&mut bundle), Some(plan));
            (loss, views)
        };
        let grads = bundle.tape.backward(bundle.loss.expect("loss node"));
        for (net, binding) in self.agents.iter_mut().zip(&bundle.agent_bindings) {
            net.collect_grads(binding, &grads);
        }
        if let (Some((mixer, _)), Some(binding)) = (&mut self.mixers, &bundle.mixer_binding) {
            mixer.collect_grads(binding, &grads);
        }
        let mut flat = Vec::new();
        for p in self.online_rl_params() {
            flat.extend_from_slice(p.grad.data());
        }
        (loss_value, flat)
    }

    /// RL loss, gradient application, and the builder views gathered from
    /// the same forward pass.
    fn rl_step(&mut self, batch: &[&Episode]) -> (f64, Vec<AgentViews>) {
        let mut bundle = TapeBundle::default();
        let (loss_value, views, _) = self.forward_loss(batch, Some(&mut bundle), None);
        let grads = bundle.tape.backward(bundle.loss.expect("loss node"));
        for (net, binding) in self.agents.iter_mut().zip(&bundle.agent_bindings) {
            net.collect_grads(binding, &grads);
        }
        if let (Some((mixer, _)), Some(binding)) = (&mut self.mixers, &bundle.mixer_binding) {
            mixer.collect_grads(binding, &grads);
        }

        let clip = self.cfg.grad_clip;
        let opt = OptimizerConfig::rmsprop(self.cfg.rl_learning_rate);
        let mut params = self.online_rl_params_mut();
        clip_global_norm(&mut params, clip);
        rmsprop_step(&mut params, &opt);
        (loss_value, views)
    }

    /// Shared forward for `update` (with tape) and `loss_on_batch` (plain).
    ///
    /// Returns the masked mean squared TD error, one `AgentViews` entry per
    /// valid timestep (step-major), and the consensus plan used. When
    /// `frozen` is given it replaces on-the-fly consensus inference.
    fn forward_loss(
        &self,
        batch: &[&Episode],
        mut bundle: Option<&mut TapeBundle>,
        frozen: Option<&[Vec<Vec<usize>>]>,
    ) -> (f64, Vec<AgentViews>, Vec<Vec<Vec<usize>>>) {
        let b = batch.len();
        let max_len = batch.iter().map(|e| e.len()).max().unwrap();
        let n = self.n_agents;

        // bindings when a tape is requested
        if let Some(bundle) = bundle.as_deref_mut() {
            bundle.agent_bindings =
                self.agents.iter().map(|a| a.bind(&mut bundle.tape)).collect();
            bundle.mixer_binding =
                self.mixers.as_ref().map(|(m, _)| m.bind(&mut bundle.tape));
        }

        // per-step assembly
        let feature_at = |t: usize| -> Vec<Tensor> {
            (0..n)
                .map(|a| {
                    let mut rows = Vec::with_capacity(b * self.feature_width);
                    for e in batch {
                        let (obs, alive, last) = if t < e.obs.len() {
                            let last = if t == 0 { None } else { e.actions.get(t - 1).map(|x| x[a]) };
                            (e.obs[t][a].as_slice(), e.alive[t][a], last)
                        } else {
                            ([].as_slice(), false, None)
                        };
                        rows.extend(self.feature_row(obs, alive, last, a));
                    }
                    Tensor::new(&[b, self.feature_width], rows)
                })
                .collect()
        };
        let state_at = |t: usize| -> Tensor {
            let mut rows = Vec::with_capacity(b * self.mixer_state_width);
            for e in batch {
                if t < e.state.len() {
                    rows.extend(self.mixer_state_row(e, t));
                } else {
                    rows.extend(std::iter::repeat(0.0).take(self.mixer_state_width));
                }
            }
            Tensor::new(&[b, self.mixer_state_width], rows)
        };
        // consensus sequence from the online pass, reused by the targets
        let mut consensus: Vec<Vec<Vec<usize>>> = Vec::with_capacity(max_len + 1); // t -> agent -> [B]
        let mut views: Vec<AgentViews> = Vec::new();

        // online forward over the tape (or plain when no tape is requested)
        let mut online_h: Vec<HiddenTrack> = (0..n)
            .map(|a| HiddenTrack::new(&self.agents[self.net_index(a)], b, bundle.as_deref_mut().map(|bu| &mut bu.tape)))
            .collect();
        let mut qtot_per_t: Vec<QtotTrack> = Vec::with_capacity(max_len);

        let infer_consensus = |builder: &ConsensusBuilder, t: usize, a: usize, feats: &Tensor, h_rows: &Tensor| -> Vec<usize> {
            match self.cfg.consensus_input {
                ConsensusInput::Observation => {
                    // raw masked observation columns of the feature matrix
                    let mut rows = Vec::with_capacity(b * self.obs_width);
                    for e in 0..b {
                        rows.extend_from_slice(&feats.row(e)[..self.obs_width]);
                    }
                    builder.infer_batch(&Tensor::new(&[b, self.obs_width], rows))
                }
                ConsensusInput::HiddenState => {
                    let _ = (t, a);
                    builder.infer_batch(h_rows)
                }
            }
        };

        for t in 0..max_len {
            let feats = feature_at(t);
            // per-agent consensus for this step
            let step_consensus: Vec<Vec<usize>> = match (frozen, &self.builder) {
                (Some(plan), _) => plan[t].clone(),
                (None, Some(builder)) => (0..n)
                    .map(|a| infer_consensus(builder, t, a, &feats[a], online_h[a].value()))
                    .collect(),
                (None, None) => vec![vec![0; b]; n],
            };

            // builder training views for this step, one per valid episode
            if self.builder.is_some() {
                let h_snapshot: Vec<Tensor> =
                    (0..n).map(|a| online_h[a].value().clone()).collect();
                for (e, episode) in batch.iter().enumerate() {
                    if t >= episode.len() {
                        continue;
                    }
                    let mut features = Vec::with_capacity(n);
                    let mut alive = Vec::with_capacity(n);
                    for a in 0..n {
                        let feat = match self.cfg.consensus_input {
                            ConsensusInput::Observation => feats[a].row(e)[..self.obs_width].to_vec(),
                            ConsensusInput::HiddenState => h_snapshot[a].row(e).to_vec(),
                        };
                        features.push(feat);
                        alive.push(episode.alive[t][a]);
                    }
                    views.push(AgentViews { features, alive });
                }
            }

            // chosen-action Q per agent, then the mixed total
            let actions_at = |a: usize| -> Vec<usize> {
                batch
                    .iter()
                    .map(|e| if t < e.len() { e.actions[t][a] } else { 0 })
                    .collect()
            };
            match bundle.as_deref_mut() {
                Some(bundle) => {
                    let mut selected = Vec::with_capacity(n);
                    for a in 0..n {
                        let tape = &mut bundle.tape;
                        let feat_node = tape.leaf(feats[a].clone());
                        let slot = self.builder.as_ref().map(|_| step_consensus[a].as_slice());
                        let h_node = online_h[a].node();
                        let (q, h_next) = bundle.agent_bindings[self.net_index(a)].forward(
                            tape, feat_node, slot, h_node,
                        );
                        online_h[a].set_node(h_next, tape);
                        selected.push(tape.select_cols(q, &actions_at(a)));
                    }
                    let tape = &mut bundle.tape;
                    let qs = tape.concat_cols(&selected);
                    let qtot = match &bundle.mixer_binding {
                        Some(mixer) => {
                            let state_node = tape.leaf(state_at(t));
                            mixer.forward(tape, qs, state_node)
                        }
                        None => VdnMixer.forward(tape, qs),
                    };
                    qtot_per_t.push(QtotTrack::Node(qtot));
                }
                None => {
                    let mut qs = Tensor::zeros(&[b, n]);
                    for a in 0..n {
                        let net = &self.agents[self.net_index(a)];
                        let slot = self.builder.as_ref().map(|_| step_consensus[a].as_slice());
                        let (q, h_next) = net.infer(&feats[a], slot.as_deref(), online_h[a].value());
                        online_h[a].set_value(h_next);
                        let actions = actions_at(a);
                        for e in 0..b {
                            qs.set2(e, a, q.get2(e, actions[e]));
                        }
                    }
                    let qtot = match &self.mixers {
                        Some((mixer, _)) => mixer.infer(&qs, &state_at(t)),
                        None => VdnMixer.infer(&qs),
                    };
                    qtot_per_t.push(QtotTrack::Value(qtot));
                }
            }
            consensus.push(step_consensus);
        }

        // trailing consensus for the bootstrap observation
        match (frozen, &self.builder) {
            (Some(plan), _) => consensus.push(plan[max_len].clone()),
            (None, Some(builder)) => {
                let feats = feature_at(max_len);
                let step: Vec<Vec<usize>> = (0..n)
                    .map(|a| infer_consensus(builder, max_len, a, &feats[a], online_h[a].value()))
                    .collect();
                consensus.push(step);
            }
            (None, None) => consensus.push(vec![vec![0; b]; n]),
        }

        // target pass: same consensus indices, own hidden trajectory
        let mut target_h: Vec<Tensor> =
            (0..n).map(|a| self.target_agents[self.net_index(a)].initial_state(b)).collect();
        let mut target_qtot: Vec<Tensor> = Vec::with_capacity(max_len + 1); // index t: Q̂_tot at step t
        for t in 0..=max_len {
            let feats = feature_at(t);
            let mut maxq = Tensor::zeros(&[b, n]);
            for a in 0..n {
                let net = &self.target_agents[self.net_index(a)];
                let slot = self.builder.as_ref().map(|_| consensus[t][a].as_slice());
                let (q, h_next) = net.infer(&feats[a], slot.as_deref(), &target_h[a]);
                target_h[a] = h_next;
                for e in 0..b {
                    let row = q.row(e);
                    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    maxq.set2(e, a, best);
                }
            }
            let qtot = match &self.mixers {
                Some((_, target)) => target.infer(&maxq, &state_at(t)),
                None => VdnMixer.infer(&maxq),
            };
            target_qtot.push(qtot);
        }

        // masked mean squared TD error
        let mut valid_total = 0.0;
        let mut y_all: Vec<Tensor> = Vec::with_capacity(max_len);
        let mut mask_all: Vec<Tensor> = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let mut y = Tensor::zeros(&[b, 1]);
            let mut mask = Tensor::zeros(&[b, 1]);
            for (e, episode) in batch.iter().enumerate() {
                if t >= episode.len() {
                    continue;
                }
                mask.set2(e, 0, 1.0);
                valid_total += 1.0;
                let terminal = t + 1 == episode.len();
                let target = if terminal {
                    episode.rewards[t]
                } else {
                    episode.rewards[t] + self.cfg.gamma * target_qtot[t + 1].get2(e, 0)
                };
                y.set2(e, 0, target);
            }
            y_all.push(y);
            mask_all.push(mask);
        }

        match bundle {
            Some(bundle) => {
                let mut total: Option<NodeId> = None;
                for t in 0..max_len {
                    let tape = &mut bundle.tape;
                    let QtotTrack::Node(qtot) = qtot_per_t[t] else { unreachable!() };
                    let y = tape.leaf(y_all[t].clone());
                    let mask = tape.leaf(mask_all[t].clone());
                    let err = tape.sub(qtot, y);
                    let sq = tape.mul(err, err);
                    let masked = tape.mul(sq, mask);
                    let s = tape.sum(masked);
                    total = Some(match total {
                        Some(acc) => tape.add(acc, s),
                        None => s,
                    });
                }
                let loss = bundle.tape.scale(total.unwrap(), 1.0 / valid_total);
                let value = bundle.tape.value(loss).item();
                assert!(value.is_finite(), "TD loss is not finite: {value}");
                bundle.loss = Some(loss);
                (value, views, consensus)
            }
            None => {
                let mut total = 0.0;
                for t in 0..max_len {
                    let QtotTrack::Value(qtot) = &qtot_per_t[t] else { unreachable!() };
                    for e in 0..b {
                        let err = qtot.get2(e, 0) - y_all[t].get2(e, 0);
                        total += err * err * mask_all[t].get2(e, 0);
                    }
                }
                (total / valid_total, views, consensus)
            }
        }
    }

    /// Hard copy of every online parameter into its target twin.
    pub fn target_sync(&mut self) {
        for (t, o) in self.target_agents.iter_mut().zip(&self.agents) {
            copy_params(t, o);
        }
        if let Some((online, target)) = &mut self.mixers {
            copy_params(target, online);
        }
    }

    fn online_rl_params(&self) -> Vec<&Parameter> {
        let mut params: Vec<&Parameter> =
            self.agents.iter().flat_map(|a| a.params()).collect();
        if let Some((mixer, _)) = &self.mixers {
            params.extend(mixer.params());
        }
        params
    }

    fn online_rl_params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut params: Vec<&mut Parameter> =
            self.agents.iter_mut().flat_map(|a| a.params_mut()).collect();
        if let Some((mixer, _)) = &mut self.mixers {
            params.extend(mixer.params_mut());
        }
        params
    }

    /// Online agent networks (index 0 when parameters are shared).
    pub fn agent_nets(&self) -> &[AgentQNet] {
        &self.agents
    }

    pub fn rl_params(&self) -> Vec<&Parameter> {
        let mut params: Vec<&Parameter> = self.agents.iter().flat_map(|a| a.params()).collect();
        params.extend(self.target_agents.iter().flat_map(|a| a.params()));
        if let Some((mixer, target)) = &self.mixers {
            params.extend(mixer.params());
            params.extend(target.params());
        }
        params
    }

    pub fn rl_fingerprint(&self) -> u64 {
        fingerprint(&self.rl_params())
    }

    /// Online RL parameter count (what a size report should cite).
    pub fn rl_param_count(&self) -> usize {
        let mut count: usize = self.agents.iter().map(|a| a.param_count()).sum();
        if let Some((mixer, _)) = &self.mixers {
            count += mixer.param_count();
        }
        count
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

/// Hidden-state bookkeeping: the tape node (when differentiating) plus a
/// detached copy of the values, which consensus inference always reads.
struct HiddenTrack {
    node: Option<NodeId>,
    value: Tensor,
}

impl HiddenTrack {
    fn new(net: &AgentQNet, batch: usize, tape: Option<&mut Tape>) -> HiddenTrack {
        let h0 = net.initial_state(batch);
        let node = tape.map(|t| t.leaf(h0.clone()));
        HiddenTrack { node, value: h0 }
    }

    fn node(&self) -> NodeId {
        self.node.expect("hidden state is not on a tape")
    }

    fn set_node(&mut self, id: NodeId, tape: &Tape) {
        self.node = Some(id);
        self.value = tape.value(id).clone();
    }

    fn set_value(&mut self, value: Tensor) {
        self.node = None;
        self.value = value;
    }

    fn value(&self) -> &Tensor {
        &self.value
    }
}

#[derive(Default)]
struct TapeBundle {
    tape: Tape,
    agent_bindings: Vec<AgentQNetBinding>,
    mixer_binding: Option<QmixMixerBinding>,
    loss: Option<NodeId>,
}

enum QtotTrack {
    Node(NodeId),
    Value(Tensor),
}

/// `y = r + gamma * sum_a max_u Q_a(next)` for the additive mixer.
pub fn td_targets_vdn(next_qs: &[Vec<f64>], reward: f64, gamma: f64, terminal: bool) -> f64 {
    if terminal {
        return reward;
    }
    let boot: f64 = next_qs
        .iter()
        .map(|q| q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    reward + gamma * boot
}

pub(crate) fn copy_params<N: Net>(dst: &mut N, src: &N) {
    let src_values: Vec<Tensor> = src.params().iter().map(|p| p.value.clone()).collect();
    for (d, v) in dst.params_mut().into_iter().zip(src_values) {
        assert!(
            d.value.shape() == v.shape(),
            "target/online parameter shape mismatch: {:?} vs {:?}",
            d.value.shape(),
            v.shape()
        );
        d.value = v;
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
pub(crate) fn clip_global_norm(params: &mut [&mut Parameter], max_norm: f64) {
    let norm_sq: f64 =
        params.iter().map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>()).sum();
    let norm = norm_sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            let grad = p.grad.scale(scale);
            p.set_grad(grad);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vdn_target_example() {
        let next = vec![vec![1.0, 2.0], vec![3.0, 0.0]];
        let y = td_targets_vdn(&next, 1.0, 0.99, false);
        assert!((y - 5.95).abs() < 1e-12);
    }

    #[test]
    fn terminal_target_ignores_bootstrap() {
        let next = vec![vec![100.0], vec![100.0]];
        assert_eq!(td_targets_vdn(&next, 1.0, 0.99, true), 1.0);
    }

    #[test]
    fn gamma_zero_reduces_target_to_reward() {
        let next = vec![vec![5.0, 7.0]];
        assert_eq!(td_targets_vdn(&next, 2.5, 0.0, false), 2.5);
    }

    #[test]
    fn clip_leaves_small_gradients_alone_and_scales_large_ones() {
        let mut p = Parameter::new("w", Tensor::new(&[2], vec![0.0, 0.0]));
        p.set_grad(Tensor::new(&[2], vec![3.0, 4.0]));
        clip_global_norm(&mut [&mut p], 10.0);
        assert_eq!(p.grad.data(), &[3.0, 4.0]);
        clip_global_norm(&mut [&mut p], 1.0);
        let norm: f64 = p.grad.data().iter().map(|g| g * g).sum::<f64>();
        assert!((norm.sqrt() - 1.0).abs() < 1e-12);
    }
}
