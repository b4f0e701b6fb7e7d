use crate::nncore::{argmax, Activations, Network, Scalar};
use crate::replay::Transition;

use super::AgentError;

pub(crate) fn to_scalars<T: Scalar>(xs: &[f32], out: &mut Vec<T>) {
    out.clear();
    out.extend(xs.iter().map(|&x| T::from_f32(x).unwrap()));
}

/// `r` for terminal samples, otherwise `r + gamma * max_a' Q_target(s', a')`.
pub fn compute_targets_dqn<T: Scalar>(
    batch: &[Transition],
    target: &Network<T>,
    gamma: T,
) -> Result<Vec<T>, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let mut acts = Activations::for_network(target);
    let mut x = Vec::new();
    let mut out = Vec::with_capacity(batch.len());
    for t in batch {
        let r = T::from_f32(t.reward).unwrap();
        if t.terminal {
            out.push(r);
            continue;
        }
        to_scalars(&t.next_state, &mut x);
        target.forward_into(&x, &mut acts)?;
        let best = acts
            .action_scores()
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max);
        out.push(r + gamma * best);
    }
    Ok(out)
}

/// Online network picks the bootstrap action, target network scores it:
/// `r + gamma * Q_target(s', argmax_a' Q_online(s', a'))`.
pub fn compute_targets_double<T: Scalar>(
    batch: &[Transition],
    online: &Network<T>,
    target: &Network<T>,
    gamma: T,
) -> Result<Vec<T>, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let mut on = Activations::for_network(online);
    let mut tg = Activations::for_network(target);
    let mut x = Vec::new();
    let mut out = Vec::with_capacity(batch.len());
    for t in batch {
        let r = T::from_f32(t.reward).unwrap();
        if t.terminal {
            out.push(r);
            continue;
        }
        to_scalars(&t.next_state, &mut x);
        online.forward_into(&x, &mut on)?;
        let pick = argmax(on.action_scores());
        target.forward_into(&x, &mut tg)?;
        out.push(r + gamma * tg.action_scores()[pick]);
    }
    Ok(out)
}
