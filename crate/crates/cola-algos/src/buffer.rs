use std::collections::VecDeque;

use rand::Rng;

/// One complete episode, immutable once stored.
///
/// Observation-like arrays have `len + 1` entries (they include the final
/// observation used for bootstrapping); actions and rewards have `len`.
#[derive(Clone, Debug)]
pub struct Episode {
    /// `t -> agent -> observation`
    pub obs: Vec<Vec<Vec<f64>>>,
    /// `t -> global state`
    pub state: Vec<Vec<f64>>,
    /// `t -> agent -> alive`
    pub alive: Vec<Vec<bool>>,
    /// `t -> agent -> discrete action`
    pub actions: Vec<Vec<usize>>,
    /// `t -> agent -> consensus class at action time (0 when disabled)`
    pub consensus: Vec<Vec<usize>>,
    /// `t -> shared reward for the transition t -> t+1`
    pub rewards: Vec<f64>,
    pub captured: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Ring buffer of whole episodes with uniform batch sampling.
pub struct EpisodeBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
}

impl EpisodeBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        EpisodeBuffer { episodes: VecDeque::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, episode: Episode) {
        assert!(!episode.is_empty(), "refusing to store an empty episode");
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    /// Uniform sample of `batch` distinct episodes (indices without
    /// replacement).
    pub fn sample(&self, batch: usize, rng: &mut dyn rand::RngCore) -> Vec<&Episode> {
        sample_indices(self.episodes.len(), batch, rng)
            .into_iter()
            .map(|i| &self.episodes[i])
            .collect()
    }
}

/// One off-policy transition for the actor-critic path.
#[derive(Clone, Debug)]
pub struct Transition {
    /// `agent -> observation`
    pub obs: Vec<Vec<f64>>,
    /// `agent -> continuous action`
    pub actions: Vec<[f64; 2]>,
    pub reward: f64,
    pub next_obs: Vec<Vec<f64>>,
    pub done: bool,
}

/// Flat ring buffer of transitions with uniform no-replacement batches.
pub struct TransitionBuffer {
    items: Vec<Transition>,
    capacity: usize,
    write: usize,
}

impl TransitionBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        TransitionBuffer { items: Vec::new(), capacity, write: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.write] = t;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    pub fn sample(&self, batch: usize, rng: &mut dyn rand::RngCore) -> Vec<&Transition> {
        sample_indices(self.items.len(), batch, rng).into_iter().map(|i| &self.items[i]).collect()
    }
}

/// `batch` distinct indices drawn uniformly from `0..len` via partial
/// Fisher-Yates over a scratch index table.
pub(crate) fn sample_indices(len: usize, batch: usize, rng: &mut dyn rand::RngCore) -> Vec<usize> {
    assert!(batch <= len, "sampling {batch} items from a buffer of {len}");
    let mut indices: Vec<usize> = (0..len).collect();
    for i in 0..batch {
        let j = rng.gen_range(i..len);
        indices.swap(i, j);
    }
    indices.truncate(batch);
    indices
}
