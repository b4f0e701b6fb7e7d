use super::{Gradients, Network, NnError, Scalar};

/// RMSProp running averages of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<T> {
    pub squares: Gradients<T>,
    pub decay: T,
    pub epsilon: T,
}

impl<T: Scalar> OptState<T> {
    pub fn new(net: &Network<T>, decay: f64, epsilon: f64) -> Self {
        Self {
            squares: Gradients::zeros_like(net),
            decay: T::lit(decay),
            epsilon: T::lit(epsilon),
        }
    }
}

/// One RMSProp update:
///
/// ```text
/// acc <- decay * acc + (1 - decay) * g^2
/// p   <- p - lr * g / sqrt(acc + eps)
/// ```
///
/// Non-finite gradients are rejected before anything is modified.
pub fn rmsprop_step<T: Scalar>(
    net: &mut Network<T>,
    grads: &Gradients<T>,
    opt: &mut OptState<T>,
    lr: T,
) -> Result<(), NnError> {
    if !grads.matches_shape(net) || !opt.squares.matches_shape(net) {
        return Err(NnError::Dimension {
            expected: net.param_count(),
            found: grads.values().count(),
        });
    }
    if !grads.is_finite() {
        return Err(NnError::NonFiniteGradient);
    }
    let decay = opt.decay;
    let keep = T::one() - decay;
    let eps = opt.epsilon;
    for ((layer, g), acc) in net
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut opt.squares.layers)
    {
        let update = |p: &mut [T], g: &[T], a: &mut [T]| {
            for ((p, &g), a) in p.iter_mut().zip(g).zip(a.iter_mut()) {
                *a = decay * *a + keep * g * g;
                *p -= lr * g / (*a + eps).sqrt();
            }
        };
        update(&mut layer.weights, &g.weights, &mut acc.weights);
        update(&mut layer.biases, &g.biases, &mut acc.biases);
    }
    Ok(())
}
