//! FIFO replay buffer with uniform without-replacement minibatch sampling.

use crate::envs::Transition;
use rand_chacha::ChaCha8Rng;

/// Ring buffer of environment transitions. Once `capacity` is reached each
/// push overwrites the oldest stored transition (FIFO eviction); sampling is
/// uniform over the current fill and never repeats an element within one
/// minibatch.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Index that the next push writes to once the buffer is full.
    next: usize,
}

impl ReplayBuffer {
    /// Creates an empty buffer holding at most `capacity` transitions.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
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

    /// Stores a transition, evicting the oldest one when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    /// Draws `min(batch, len)` distinct transitions uniformly at random.
    /// Returns an empty vector when the buffer is empty.
    pub fn sample<'a>(&'a self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<&'a Transition> {
        let amount = batch.min(self.items.len());
        if amount == 0 {
            return Vec::new();
        }
        rand::seq::index::sample(rng, self.items.len(), amount)
            .iter()
            .map(|i| &self.items[i])
            .collect()
    }

    /// All stored transitions in storage order (not insertion order once the
    /// ring has wrapped); useful for full-dataset passes.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}
