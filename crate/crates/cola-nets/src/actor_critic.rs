use cola_tensor::{Gradients, NodeId, Parameter, Tape, Tensor};


use crate::agent::concat_cols_plain;
use crate::embedding::{EmbeddingBinding, EmbeddingTable};
use crate::mlp::{Activation, Mlp, MlpBinding, MlpSpec, OutputActivation};
use crate::Net;

/// Deterministic policy head: observation (plus consensus embedding) to a
/// tanh-bounded continuous action in [-1, 1] per dimension.
pub struct Actor {
    pub obs_width: usize,
    pub action_width: usize,
    embed: Option<EmbeddingTable>,
    mlp: Mlp,
}

pub struct ActorBinding {
    embed: Option<EmbeddingBinding>,
    mlp: MlpBinding,
}

impl Actor {
    pub fn new(
        name: &str,
        obs_width: usize,
        action_width: usize,
        hidden: usize,
        consensus: Option<(usize, usize)>,
        rng: &mut dyn rand::RngCore,
    ) -> Self {
        let embed = consensus.map(|(k, e)| EmbeddingTable::new(&format!("{name}.consensus"), k, e, rng));
        let input = obs_width + consensus.map_or(0, |(_, e)| e);
        Actor {
            obs_width,
            action_width,
            embed,
            mlp: Mlp::new(
                &format!("{name}.pi"),
                MlpSpec::new(&[input, hidden, hidden, action_width], Activation::Relu, OutputActivation::Tanh),
                rng,
            ),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> ActorBinding {
        ActorBinding {
            embed: self.embed.as_ref().map(|e| e.bind(tape)),
            mlp: self.mlp.bind(tape),
        }
    }

    pub fn infer(&self, obs: &Tensor, consensus: Option<&[usize]>) -> Tensor {
        let input = match (&self.embed, consensus) {
            (Some(t), Some(idx)) => concat_cols_plain(obs, &t.infer(idx)),
            (None, None) => obs.clone(),
            _ => panic!("consensus input does not match the actor's consensus slot"),
        };
        self.mlp.infer(&input)
    }

    pub fn collect_grads(&mut self, b: &ActorBinding, g: &Gradients) {
        if let (Some(t), Some(bind)) = (&mut self.embed, &b.embed) {
            t.collect_grads(bind, g);
        }
        self.mlp.collect_grads(&b.mlp, g);
    }
}

impl ActorBinding {
    pub fn forward(&self, tape: &mut Tape, obs: NodeId, consensus: Option<&[usize]>) -> NodeId {
        let input = match (&self.embed, consensus) {
            (Some(t), Some(idx)) => {
                let emb = t.lookup(tape, idx);
                tape.concat_cols(&[obs, emb])
            }
            (None, None) => obs,
            _ => panic!("consensus input does not match the actor's consensus slot"),
        };
        self.mlp.forward(tape, input)
    }
}

impl Net for Actor {
    fn params(&self) -> Vec<&Parameter> {
        let mut p = Vec::new();
        if let Some(e) = &self.embed {
            p.extend(e.params());
        }
        p.extend(self.mlp.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = Vec::new();
        if let Some(e) = &mut self.embed {
            p.extend(e.params_mut());
        }
        p.extend(self.mlp.params_mut());
        p
    }
}

/// Centralized action-value head over (state proxy, consensus embedding,
/// all agents' actions).
pub struct Critic {
    pub state_width: usize,
    pub joint_action_width: usize,
    embed: Option<EmbeddingTable>,
    mlp: Mlp,
}

pub struct CriticBinding {
    embed: Option<EmbeddingBinding>,
    mlp: MlpBinding,
}

impl Critic {
    pub fn new(
        name: &str,
        state_width: usize,
        joint_action_width: usize,
        hidden: usize,
        consensus: Option<(usize, usize)>,
        rng: &mut dyn rand::RngCore,
    ) -> Self {
        let embed = consensus.map(|(k, e)| EmbeddingTable::new(&format!("{name}.consensus"), k, e, rng));
        let input = state_width + joint_action_width + consensus.map_or(0, |(_, e)| e);
        Critic {
            state_width,
            joint_action_width,
            embed,
            mlp: Mlp::new(
                &format!("{name}.q"),
                MlpSpec::new(&[input, hidden, hidden, 1], Activation::Relu, OutputActivation::None),
                rng,
            ),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> CriticBinding {
        CriticBinding {
            embed: self.embed.as_ref().map(|e| e.bind(tape)),
            mlp: self.mlp.bind(tape),
        }
    }

    pub fn infer(&self, state: &Tensor, consensus: Option<&[usize]>, joint_action: &Tensor) -> Tensor {
        let mut input = state.clone();
        if let (Some(t), Some(idx)) = (&self.embed, consensus) {
            input = concat_cols_plain(&input, &t.infer(idx));
        } else if self.embed.is_some() || consensus.is_some() {
            panic!("consensus input does not match the critic's consensus slot");
        }
        let input = concat_cols_plain(&input, joint_action);
        self.mlp.infer(&input)
    }

    pub fn collect_grads(&mut self, b: &CriticBinding, g: &Gradients) {
        if let (Some(t), Some(bind)) = (&mut self.embed, &b.embed) {
            t.collect_grads(bind, g);
        }
        self.mlp.collect_grads(&b.mlp, g);
    }
}

impl CriticBinding {
    pub fn forward(
        &self,
        tape: &mut Tape,
        state: NodeId,
        consensus: Option<&[usize]>,
        joint_action: NodeId,
    ) -> NodeId {
        let mut parts = vec![state];
        match (&self.embed, consensus) {
            (Some(t), Some(idx)) => parts.push(t.lookup(tape, idx)),
            (None, None) => {}
            _ => panic!("consensus input does not match the critic's consensus slot"),
        }
        parts.push(joint_action);
        let input = tape.concat_cols(&parts);
        self.mlp.forward(tape, input)
    }
}

impl Net for Critic {
    fn params(&self) -> Vec<&Parameter> {
        let mut p = Vec::new();
        if let Some(e) = &self.embed {
            p.extend(e.params());
        }
        p.extend(self.mlp.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = Vec::new();
        if let Some(e) = &mut self.embed {
            p.extend(e.params_mut());
        }
        p.extend(self.mlp.params_mut());
        p
    }
}
