//! DQN, Double DQN, Dueling DQN and a replay-based actor-critic.

mod targets;
mod train;

pub use targets::{compute_targets_double, compute_targets_dqn};
pub use train::{huber, A3cStats, TrainConfig, TrainState, UpdateStats};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::nncore::{argmax, softmax, Activations, Head, Network, NnError, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    Dqn,
    DoubleDqn,
    DuelingDqn,
    A3c,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [
        AgentKind::Dqn,
        AgentKind::DoubleDqn,
        AgentKind::DuelingDqn,
        AgentKind::A3c,
    ];

    pub fn head(self) -> Head {
        match self {
            AgentKind::Dqn | AgentKind::DoubleDqn => Head::Single,
            AgentKind::DuelingDqn => Head::Dueling,
            AgentKind::A3c => Head::ActorCritic,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::DoubleDqn => "double",
            AgentKind::DuelingDqn => "dueling",
            AgentKind::A3c => "a3c",
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            AgentKind::Dqn => 0,
            AgentKind::DoubleDqn => 1,
            AgentKind::DuelingDqn => 2,
            AgentKind::A3c => 3,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(usize::from(b)).copied()
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "dqn" => Ok(AgentKind::Dqn),
            "double" | "double_dqn" | "ddqn" => Ok(AgentKind::DoubleDqn),
            "dueling" | "dueling_dqn" => Ok(AgentKind::DuelingDqn),
            "a3c" | "actor_critic" => Ok(AgentKind::A3c),
            _ => Err(AgentError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("unknown agent kind {0:?}")]
    UnknownKind(String),
    #[error("{kind} needs a {expected:?} head, network has {found:?}")]
    HeadMismatch {
        kind: AgentKind,
        expected: Head,
        found: Head,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss; batch skipped")]
    NonFiniteLoss,
    #[error(transparent)]
    Network(#[from] NnError),
}

/// Linear anneal from `start` to `end` over `anneal_steps`, constant after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl EpsilonSchedule {
    pub fn new(start: f64, end: f64, anneal_steps: u64) -> Self {
        assert!(start >= end && end >= 0.0, "epsilon must anneal downward");
        Self {
            start,
            end,
            anneal_steps: anneal_steps.max(1),
        }
    }

    /// Anneals over `fraction` of `total_steps`.
    pub fn over_fraction(start: f64, end: f64, total_steps: u64, fraction: f64) -> Self {
        Self::new(start, end, (total_steps as f64 * fraction).round() as u64)
    }

    pub fn at(&self, step: u64) -> f64 {
        if step >= self.anneal_steps {
            return self.end;
        }
        let t = step as f64 / self.anneal_steps as f64;
        self.start + (self.end - self.start) * t
    }
}

/// Action for an arbitrary state, reusing `acts` as forward scratch.
///
/// Value heads act epsilon-greedily (ties to the lowest index). Actor-critic
/// heads ignore epsilon and sample from the softmax of their logits.
pub fn select_action_with<T: Scalar>(
    net: &Network<T>,
    acts: &mut Activations<T>,
    state: &[T],
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<usize, NnError> {
    let n = net.action_count();
    if net.head() == Head::ActorCritic {
        net.forward_into(state, acts)?;
        let probs = softmax(acts.action_scores());
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p.to_f64().unwrap();
            if u < acc {
                return Ok(i);
            }
        }
        return Ok(n - 1);
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..n));
    }
    net.forward_into(state, acts)?;
    Ok(argmax(acts.action_scores()))
}

pub fn select_action<T: Scalar>(
    net: &Network<T>,
    state: &[T],
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<usize, NnError> {
    let mut acts = Activations::for_network(net);
    select_action_with(net, &mut acts, state, epsilon, rng)
}

/// Argmax of the Q-values (or policy logits).
pub fn greedy_action<T: Scalar>(
    net: &Network<T>,
    acts: &mut Activations<T>,
    state: &[T],
) -> Result<usize, NnError> {
    net.forward_into(state, acts)?;
    Ok(argmax(acts.action_scores()))
}
