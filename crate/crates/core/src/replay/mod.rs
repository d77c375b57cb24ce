//! Bounded experience store with uniform minibatch sampling.

pub mod dataset;

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::vision::{Frame, STATE_SIZE};

pub const DEFAULT_CAPACITY: usize = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("action {action} outside [0, {max}]")]
    InvalidAction { action: usize, max: usize },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),
    #[error("buffer holds {size} experiences, {requested} requested")]
    Underfilled { size: usize, requested: usize },
    #[error("capacity must be positive")]
    ZeroCapacity,
}

/// Anything that can be stored as an observation.
pub trait ReplayState: Clone {
    fn check(&self) -> Result<(), String>;
}

/// Stored frames are the cropped and resized integer image; normalization
/// happens when a batch is assembled.
impl ReplayState for Arc<Frame> {
    fn check(&self) -> Result<(), String> {
        if self.width() == STATE_SIZE && self.height() == STATE_SIZE {
            Ok(())
        } else {
            Err(format!(
                "frame is {}x{}, expected {}x{}",
                self.width(),
                self.height(),
                STATE_SIZE,
                STATE_SIZE
            ))
        }
    }
}

impl ReplayState for usize {
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

/// One transition `(s, a, r, s', done)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Experience<S> {
    pub state: S,
    pub action: usize,
    pub reward: f64,
    pub next_state: S,
    pub done: bool,
}

/// FIFO ring of experiences. Each stored item keeps its insertion serial so
/// a sampled batch can be traced back to its source.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<S> {
    capacity: usize,
    num_actions: usize,
    ring: Vec<(u64, Experience<S>)>,
    /// Slot that the next insert overwrites once the ring is full.
    head: usize,
    inserted: u64,
}

impl<S: ReplayState> ReplayBuffer<S> {
    pub fn new(capacity: usize, num_actions: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(ReplayBuffer {
            capacity,
            num_actions,
            ring: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
            inserted: 0,
        })
    }

    /// Rebuilds a buffer from its contents, oldest first, keeping the
    /// serials. Sampling depends only on this order, so a restored buffer
    /// draws exactly what the original would have.
    pub fn restore(
        capacity: usize,
        num_actions: usize,
        first_serial: u64,
        items: impl IntoIterator<Item = Experience<S>>,
    ) -> Result<Self, ReplayError> {
        let mut b = Self::new(capacity, num_actions)?;
        b.inserted = first_serial;
        for e in items {
            b.push(e)?;
        }
        Ok(b)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    /// Total number of pushes ever made.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, e: Experience<S>) -> Result<(), ReplayError> {
        if e.action >= self.num_actions {
            return Err(ReplayError::InvalidAction {
                action: e.action,
                max: self.num_actions - 1,
            });
        }
        if !e.reward.is_finite() {
            return Err(ReplayError::NonFiniteReward(e.reward));
        }
        e.state.check().map_err(ReplayError::InvalidState)?;
        e.next_state.check().map_err(ReplayError::InvalidState)?;

        let item = (self.inserted, e);
        if self.ring.len() < self.capacity {
            self.ring.push(item);
        } else {
            self.ring[self.head] = item;
            self.head = (self.head + 1) % self.capacity;
        }
        self.inserted += 1;
        Ok(())
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Experience<S>> {
        self.iter_with_serials().map(|(_, e)| e)
    }

    pub fn iter_with_serials(&self) -> impl Iterator<Item = (u64, &Experience<S>)> {
        let (newer, older) = self.ring.split_at(self.head);
        older.iter().chain(newer).map(|(s, e)| (*s, e))
    }

    /// `batch_size` draws, uniform with replacement, each paired with the
    /// insertion serial of the drawn experience. Draws index the buffer in
    /// oldest-to-newest order. Any nonempty buffer can be sampled; the
    /// warm-up minimum is the trainer's concern.
    pub fn sample_with_serials<R: Rng>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<(u64, Experience<S>)>, ReplayError> {
        if self.ring.is_empty() {
            return Err(ReplayError::Underfilled {
                size: self.ring.len(),
                requested: batch_size,
            });
        }
        Ok((0..batch_size)
            .map(|_| {
                let i = rng.gen_range(0..self.ring.len());
                self.ring[(self.head + i) % self.ring.len()].clone()
            })
            .collect())
    }

    pub fn sample<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<Experience<S>>, ReplayError> {
        Ok(self
            .sample_with_serials(batch_size, rng)?
            .into_iter()
            .map(|(_, e)| e)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(i: usize) -> Experience<usize> {
        Experience {
            state: i,
            action: i % 91,
            reward: i as f64,
            next_state: i + 1,
            done: false,
        }
    }

    #[test]
    fn fifo_eviction_keeps_newest() {
        let mut b = ReplayBuffer::new(2, 91).unwrap();
        for i in 1..=3 {
            b.push(exp(i)).unwrap();
        }
        let states: Vec<usize> = b.iter().map(|e| e.state).collect();
        assert_eq!(states, vec![2, 3]);
        assert_eq!(b.inserted(), 3);
    }

    #[test]
    fn first_push_gives_size_one() {
        let mut b = ReplayBuffer::new(10, 91).unwrap();
        b.push(exp(0)).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn data_scale_counts() {
        let mut b = ReplayBuffer::new(DEFAULT_CAPACITY, 91).unwrap();
        for i in 0..115_000 {
            b.push(exp(i)).unwrap();
        }
        assert_eq!(b.len(), 100_000);
        assert_eq!(b.inserted(), 115_000);
        assert_eq!(b.iter().next().unwrap().state, 15_000);
    }

    #[test]
    fn invalid_experiences_are_rejected() {
        let mut b = ReplayBuffer::new(4, 91).unwrap();
        let mut e = exp(1);
        e.action = 91;
        assert_eq!(b.push(e), Err(ReplayError::InvalidAction { action: 91, max: 90 }));
        let mut e = exp(1);
        e.reward = f64::NAN;
        assert!(b.push(e).is_err());
        assert!(b.is_empty());

        let mut frames = ReplayBuffer::new(4, 91).unwrap();
        let small = Arc::new(Frame::filled(10, 10, [0; 3]));
        let ok = Arc::new(Frame::filled(STATE_SIZE, STATE_SIZE, [0; 3]));
        let bad = Experience {
            state: ok.clone(),
            action: 3,
            reward: 0.0,
            next_state: small,
            done: false,
        };
        assert!(matches!(frames.push(bad), Err(ReplayError::InvalidState(_))));
        assert_eq!(ReplayBuffer::<usize>::new(0, 91).unwrap_err(), ReplayError::ZeroCapacity);
    }

    #[test]
    fn single_element_sampled_repeatedly() {
        let mut b = ReplayBuffer::new(4, 91).unwrap();
        b.push(exp(7)).unwrap();
        let batch = b.sample(3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(batch, vec![exp(7), exp(7), exp(7)]);
    }

    #[test]
    fn underfilled_sample_is_rejected() {
        let b = ReplayBuffer::<usize>::new(4, 91).unwrap();
        let err = b.sample(3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert_eq!(err, ReplayError::Underfilled { size: 0, requested: 3 });
    }

    #[test]
    fn sampling_is_seeded_and_read_only() {
        let mut b = ReplayBuffer::new(50, 91).unwrap();
        for i in 0..80 {
            b.push(exp(i)).unwrap();
        }
        let before: Vec<_> = b.iter().cloned().collect();
        let x = b.sample_with_serials(32, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let y = b.sample_with_serials(32, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(x, y);
        for (serial, e) in &x {
            assert_eq!(*serial as usize, e.state);
        }
        assert_eq!(b.iter().cloned().collect::<Vec<_>>(), before);
    }

    #[test]
    fn restored_buffer_samples_identically() {
        let mut b = ReplayBuffer::new(50, 91).unwrap();
        for i in 0..137 {
            b.push(exp(i)).unwrap();
        }
        let r = ReplayBuffer::restore(50, 91, 87, b.iter().cloned()).unwrap();
        assert_eq!(r.inserted(), 137);
        let x = b.sample_with_serials(64, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let y = r.sample_with_serials(64, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(x, y);
    }
}
