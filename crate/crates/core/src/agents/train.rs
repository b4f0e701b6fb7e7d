use crate::nncore::{rmsprop_step, softmax, Activations, Gradients, Head, Network, OptState, Scalar};
use crate::replay::Transition;

use super::targets::{compute_targets_double, compute_targets_dqn, to_scalars};
use super::{AgentError, AgentKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub target_sync_every: u64,
    pub entropy_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 0.00025,
            rmsprop_decay: 0.95,
            rmsprop_eps: 1e-6,
            target_sync_every: 10_000,
            entropy_weight: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct A3cStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// What one optimizer step reports.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    /// Mean Huber loss for value agents; combined loss for actor-critic.
    pub loss: f64,
    pub a3c: Option<A3cStats>,
}

/// Huber loss with threshold 1, whose derivative is the TD error clipped to
/// [-1, 1].
pub fn huber(delta: f64) -> f64 {
    let a = delta.abs();
    if a <= 1.0 {
        0.5 * delta * delta
    } else {
        a - 0.5
    }
}

/// Online and target networks, optimizer state and step counter.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub kind: AgentKind,
    pub online: Network<T>,
    pub target: Network<T>,
    pub opt: OptState<T>,
    pub step: u64,
    pub config: TrainConfig,
    grads: Gradients<T>,
    acts: Activations<T>,
    x: Vec<T>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(kind: AgentKind, online: Network<T>, config: TrainConfig) -> Result<Self, AgentError> {
        if online.head() != kind.head() {
            return Err(AgentError::HeadMismatch {
                kind,
                expected: kind.head(),
                found: online.head(),
            });
        }
        assert!(config.target_sync_every > 0, "target_sync_every must be positive");
        Ok(Self {
            kind,
            target: online.clone(),
            opt: OptState::new(&online, config.rmsprop_decay, config.rmsprop_eps),
            grads: Gradients::zeros_like(&online),
            acts: Activations::for_network(&online),
            x: Vec::new(),
            online,
            step: 0,
            config,
        })
    }

    pub fn sync_target(&mut self) {
        self.target.copy_params_from(&self.online);
    }

    /// Gradients from the most recent update attempt.
    pub fn gradients(&self) -> &Gradients<T> {
        &self.grads
    }

    /// One optimizer step of whichever algorithm `kind` names.
    pub fn update(&mut self, batch: &[Transition]) -> Result<UpdateStats, AgentError> {
        if self.kind == AgentKind::A3c {
            let s = self.a3c_update(batch)?;
            let beta = self.config.entropy_weight;
            Ok(UpdateStats {
                loss: s.policy_loss + s.value_loss - beta * s.entropy,
                a3c: Some(s),
            })
        } else {
            Ok(UpdateStats {
                loss: self.train_batch(batch)?,
                a3c: None,
            })
        }
    }

    /// Q-learning step; returns the mean Huber loss of the batch.
    ///
    /// Dueling networks bootstrap with double targets.
    pub fn train_batch(&mut self, batch: &[Transition]) -> Result<f64, AgentError> {
        let loss = self.value_gradients(batch)?;
        self.apply()?;
        Ok(loss)
    }

    /// Fills the gradient buffer for a value-head batch without stepping.
    pub fn value_gradients(&mut self, batch: &[Transition]) -> Result<f64, AgentError> {
        if self.kind == AgentKind::A3c {
            return Err(AgentError::HeadMismatch {
                kind: self.kind,
                expected: Head::Single,
                found: Head::ActorCritic,
            });
        }
        let gamma = T::lit(self.config.gamma);
        let targets = match self.kind {
            AgentKind::Dqn => compute_targets_dqn(batch, &self.target, gamma)?,
            _ => compute_targets_double(batch, &self.online, &self.target, gamma)?,
        };
        let inv_b = T::one() / T::from_usize(batch.len()).unwrap();
        let mut og = vec![T::zero(); self.online.output_len()];
        let mut loss = 0.0;
        self.grads.fill_zero();
        for (t, &y) in batch.iter().zip(&targets) {
            to_scalars(&t.state, &mut self.x);
            self.online.forward_into(&self.x, &mut self.acts)?;
            let a = usize::from(t.action);
            let delta = self.acts.action_scores()[a] - y;
            loss += huber(delta.to_f64().unwrap());
            og.iter_mut().for_each(|g| *g = T::zero());
            og[a] = delta.max(-T::one()).min(T::one()) * inv_b;
            self.online.backward_accumulate(&self.acts, &og, &mut self.grads)?;
        }
        let loss = loss / batch.len() as f64;
        if !loss.is_finite() {
            log::warn!("non-finite loss at step {}; batch skipped", self.step);
            return Err(AgentError::NonFiniteLoss);
        }
        Ok(loss)
    }

    /// Actor-critic step with replay and a target value network.
    ///
    /// Per sample, with `y = r` on terminal and `r + gamma * V_target(s')`
    /// otherwise, and advantage `A = y - V(s)` held constant:
    ///
    /// ```text
    /// L = -log pi(a|s) * A + 0.5 * (y - V(s))^2 - beta * H(pi(.|s))
    /// ```
    ///
    /// averaged over the batch.
    pub fn a3c_update(&mut self, batch: &[Transition]) -> Result<A3cStats, AgentError> {
        let stats = self.a3c_gradients(batch)?;
        self.apply()?;
        Ok(stats)
    }

    /// Fills the gradient buffer for an actor-critic batch without stepping.
    pub fn a3c_gradients(&mut self, batch: &[Transition]) -> Result<A3cStats, AgentError> {
        if self.kind != AgentKind::A3c {
            return Err(AgentError::HeadMismatch {
                kind: self.kind,
                expected: Head::ActorCritic,
                found: self.online.head(),
            });
        }
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let gamma = T::lit(self.config.gamma);
        let beta = T::lit(self.config.entropy_weight);
        let inv_b = T::one() / T::from_usize(batch.len()).unwrap();
        let n = self.online.action_count();
        let mut og = vec![T::zero(); n + 1];
        let mut target_acts = Activations::for_network(&self.target);
        let mut stats = A3cStats::default();
        self.grads.fill_zero();
        for t in batch {
            let r = T::from_f32(t.reward).unwrap();
            let y = if t.terminal {
                r
            } else {
                to_scalars(&t.next_state, &mut self.x);
                self.target.forward_into(&self.x, &mut target_acts)?;
                r + gamma * state_value(&target_acts)
            };
            to_scalars(&t.state, &mut self.x);
            self.online.forward_into(&self.x, &mut self.acts)?;
            let v = state_value(&self.acts);
            let adv = y - v;
            let probs = softmax(self.acts.action_scores());
            let logp: Vec<T> = probs.iter().map(|p| p.max(T::min_positive_value()).ln()).collect();
            let entropy = -probs.iter().zip(&logp).map(|(&p, &l)| p * l).sum::<T>();
            let a = usize::from(t.action);

            stats.policy_loss -= (logp[a] * adv).to_f64().unwrap();
            stats.value_loss += (T::lit(0.5) * adv * adv).to_f64().unwrap();
            stats.entropy += entropy.to_f64().unwrap();

            for k in 0..n {
                let onehot = if k == a { T::one() } else { T::zero() };
                let d_policy = adv * (probs[k] - onehot);
                let d_entropy = beta * probs[k] * (logp[k] + entropy);
                og[k] = (d_policy + d_entropy) * inv_b;
            }
            og[n] = -adv * inv_b;
            self.online.backward_accumulate(&self.acts, &og, &mut self.grads)?;
        }
        let b = batch.len() as f64;
        stats.policy_loss /= b;
        stats.value_loss /= b;
        stats.entropy /= b;
        if ![stats.policy_loss, stats.value_loss, stats.entropy]
            .iter()
            .all(|x| x.is_finite())
        {
            log::warn!("non-finite actor-critic loss at step {}; batch skipped", self.step);
            return Err(AgentError::NonFiniteLoss);
        }
        Ok(stats)
    }

    fn apply(&mut self) -> Result<(), AgentError> {
        let lr = T::lit(self.config.lr);
        if let Err(e) = rmsprop_step(&mut self.online, &self.grads, &mut self.opt, lr) {
            log::warn!("optimizer rejected step {}: {e}", self.step);
            return Err(e.into());
        }
        self.step += 1;
        if self.step % self.config.target_sync_every == 0 {
            self.sync_target();
        }
        Ok(())
    }
}

fn state_value<T: Scalar>(acts: &Activations<T>) -> T {
    match &acts.output {
        crate::nncore::HeadOutput::ActorCritic { value, .. } => *value,
        _ => unreachable!("actor-critic head expected"),
    }
}
