use rand::Rng;

use crate::error::{Error, Result};
use crate::ndmath::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Absorbing next state; zeroes the bootstrap term.
    pub done: bool,
}

impl Transition {
    fn validate(&self) -> Result<()> {
        let finite = self
            .obs
            .iter()
            .chain(&self.action)
            .chain(&self.next_obs)
            .chain(std::iter::once(&self.reward))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("transition".into()));
        }
        if self.action.iter().any(|a| a.abs() > 1.0) {
            return Err(Error::InvalidConfig("transition action outside [-1, 1]".into()));
        }
        Ok(())
    }
}

/// Column-stacked minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_obs: Matrix,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyBuffer)?;
        let (od, ad) = (first.obs.len(), first.action.len());
        let n = items.len();
        let mut obs = Matrix::zeros(n, od);
        let mut actions = Matrix::zeros(n, ad);
        let mut next_obs = Matrix::zeros(n, od);
        let mut rewards = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        for (i, t) in items.iter().enumerate() {
            if t.obs.len() != od || t.next_obs.len() != od || t.action.len() != ad {
                return Err(Error::shape("batch", (t.obs.len(), t.action.len()), (od, ad)));
            }
            obs.row_mut(i).copy_from_slice(&t.obs);
            actions.row_mut(i).copy_from_slice(&t.action);
            next_obs.row_mut(i).copy_from_slice(&t.next_obs);
            rewards.push(t.reward);
            dones.push(t.done);
        }
        Ok(Batch {
            obs,
            actions,
            rewards,
            next_obs,
            dones,
        })
    }
}

/// Fixed-capacity ring of transitions; once full, each push overwrites the
/// oldest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
    }

    /// Rebuilds a buffer from its raw parts (checkpoint restore).
    pub fn from_parts(capacity: usize, storage: Vec<Transition>, cursor: usize) -> Result<Self> {
        if capacity == 0 || storage.len() > capacity || cursor >= capacity {
            return Err(Error::InvalidConfig("inconsistent replay buffer state".into()));
        }
        Ok(Self {
            capacity,
            storage,
            cursor,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Stored transitions in slot order (not insertion order once wrapped).
    pub fn storage(&self) -> &[Transition] {
        &self.storage
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.validate()?;
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// `n` indices drawn uniformly with replacement from the filled region.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let size = self.storage.len();
        Ok((0..n).map(|_| rng.random_range(0..size)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(n, rng)?;
        let items: Vec<&Transition> = idx.iter().map(|&i| &self.storage[i]).collect();
        Batch::from_transitions(&items)
    }
}
