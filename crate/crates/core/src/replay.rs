//! Fixed-capacity FIFO experience buffer with uniform sampling.

use rand::Rng;
use thiserror::Error;

/// One experience tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: u8,
    pub reward: f32,
    pub next_state: Vec<f32>,
    pub terminal: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("transition has dimension {found}, memory holds dimension {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("replay holds {fill} transitions, {required} needed before sampling")]
    NotReady { fill: usize, required: usize },
}

/// Ring buffer over flat arrays. The state dimension is fixed by the first push.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    warmup: usize,
    dim: Option<usize>,
    states: Vec<f32>,
    next_states: Vec<f32>,
    actions: Vec<u8>,
    rewards: Vec<f32>,
    terminals: Vec<bool>,
    cursor: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            warmup: 1,
            dim: None,
            states: Vec::new(),
            next_states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminals: Vec::new(),
            cursor: 0,
        }
    }

    /// Minimum fill before [`sample`](Self::sample) succeeds.
    pub fn with_warmup(mut self, warmup: usize) -> Self {
        self.warmup = warmup.max(1);
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_ready(&self) -> bool {
        self.len() >= self.warmup
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn push(&mut self, t: Transition) -> Result<(), ReplayError> {
        let dim = *self.dim.get_or_insert(t.state.len());
        for found in [t.state.len(), t.next_state.len()] {
            if found != dim {
                return Err(ReplayError::Dimension {
                    expected: dim,
                    found,
                });
            }
        }
        if self.len() < self.capacity {
            self.states.extend_from_slice(&t.state);
            self.next_states.extend_from_slice(&t.next_state);
            self.actions.push(t.action);
            self.rewards.push(t.reward);
            self.terminals.push(t.terminal);
        } else {
            let i = self.cursor;
            self.states[i * dim..(i + 1) * dim].copy_from_slice(&t.state);
            self.next_states[i * dim..(i + 1) * dim].copy_from_slice(&t.next_state);
            self.actions[i] = t.action;
            self.rewards[i] = t.reward;
            self.terminals[i] = t.terminal;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    fn slot(&self, i: usize) -> Transition {
        let d = self.dim.unwrap_or(0);
        Transition {
            state: self.states[i * d..(i + 1) * d].to_vec(),
            action: self.actions[i],
            reward: self.rewards[i],
            next_state: self.next_states[i * d..(i + 1) * d].to_vec(),
            terminal: self.terminals[i],
        }
    }

    /// Transition by age, 0 being the oldest still held.
    pub fn get(&self, age: usize) -> Option<Transition> {
        if age >= self.len() {
            return None;
        }
        let oldest = if self.len() < self.capacity { 0 } else { self.cursor };
        Some(self.slot((oldest + age) % self.capacity))
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        (0..self.len()).map(move |i| self.get(i).unwrap())
    }

    /// `batch` transitions drawn uniformly with replacement.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<Transition>, ReplayError> {
        if !self.is_ready() {
            return Err(ReplayError::NotReady {
                fill: self.len(),
                required: self.warmup,
            });
        }
        let n = self.len();
        Ok((0..batch).map(|_| self.slot(rng.gen_range(0..n))).collect())
    }
}
