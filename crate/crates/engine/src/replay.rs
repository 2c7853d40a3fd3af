//! Replay buffer of state-action-next-state transitions, accumulated
//! across episodes. Insertion order is preserved and every transition keeps
//! its episode index so per-episode data distributions stay recoverable for
//! the drift and model-regret diagnostics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transition {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub x_next: Vec<f64>,
    pub episode_index: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReplayBuffer {
    transitions: Vec<Transition>,
    /// Maximum transition count; overflow evicts oldest whole episodes.
    pub capacity: Option<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            transitions: Vec::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Appends one episode's transitions, stamping the episode index, then
    /// evicts the oldest whole episodes while over capacity.
    pub fn push_episode(&mut self, episode_index: u64, transitions: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>) {
        for (x, u, x_next) in transitions {
            self.transitions.push(Transition {
                x,
                u,
                x_next,
                episode_index,
            });
        }
        if let Some(cap) = self.capacity {
            while self.transitions.len() > cap {
                let oldest = self.transitions[0].episode_index;
                let count = self
                    .transitions
                    .iter()
                    .take_while(|t| t.episode_index == oldest)
                    .count();
                self.transitions.drain(0..count);
            }
        }
    }

    /// Uniform-with-replacement minibatch over the whole buffer (the mixture
    /// distribution over all buffered episodes).
    pub fn sample_minibatch<'a, R: Rng + ?Sized>(
        &'a self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<&'a Transition>> {
        if self.transitions.is_empty() {
            return Err(EngineError::contract("sample_minibatch on empty buffer"));
        }
        Ok((0..batch_size)
            .map(|_| &self.transitions[rng.random_range(0..self.transitions.len())])
            .collect())
    }

    /// All transitions recorded for one episode, in insertion order.
    pub fn episode_transitions(&self, episode_index: u64) -> Vec<&Transition> {
        self.transitions
            .iter()
            .filter(|t| t.episode_index == episode_index)
            .collect()
    }

    /// Distinct episode indices currently present, ascending.
    pub fn episode_indices(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for t in &self.transitions {
            if out.last() != Some(&t.episode_index) {
                out.push(t.episode_index);
            }
        }
        out
    }
}
