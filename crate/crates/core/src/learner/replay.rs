use std::sync::Arc;

use rand::Rng;

use crate::env::{Observation, RewardVector};
use crate::error::{Error, Result};

/// One transition. Consecutive transitions share their observation.
#[derive(Debug, Clone)]
pub struct Experience {
    pub obs: Arc<Observation>,
    /// Flattened joint action in agent order.
    pub action: Vec<f64>,
    pub reward: RewardVector,
    pub next_obs: Arc<Observation>,
    pub done: bool,
}

/// Fixed-capacity ring buffer.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Experience>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { capacity, items: Vec::new(), cursor: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.cursor] = e;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Experience {
        &self.items[i]
    }

    /// Distinct uniform indices.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch == 0 || self.items.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if batch > self.items.len() {
            return Err(Error::dim(format!("batch {batch} exceeds buffer size {}", self.items.len())));
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batch).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Experience>> {
        Ok(self.sample_indices(batch, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }
}
