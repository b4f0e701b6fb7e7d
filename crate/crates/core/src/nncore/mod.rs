//! Dense feed-forward networks with exact reverse-mode gradients, an RMSProp
//! optimizer and a finite-difference gradient checker.
//!
//! Everything here is generic over [`Scalar`] so the same code runs the
//! 32-bit training networks and the 64-bit shadow copies used for gradient
//! checking.

mod gradcheck;
mod network;
mod optim;

pub use gradcheck::{
    gradient_check, gradient_check_suite, random_small_network, GradCheckReport, SuiteReport,
};
pub use network::{
    dot, specs_single, specs_two_stream, Activations, Dense, Gradients, HeadOutput, LayerActs,
    LayerGrad, Network,
};
pub use optim::{rmsprop_step, OptState};

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use thiserror::Error;

/// Real number type a network can be instantiated over.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Default + Debug + Send + Sync + Sum + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn to_byte(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_width: usize, output_width: usize, activation: Activation) -> Self {
        Self {
            input_width,
            output_width,
            activation,
        }
    }

    pub fn relu(input_width: usize, output_width: usize) -> Self {
        Self::new(input_width, output_width, Activation::Relu)
    }

    pub fn linear(input_width: usize, output_width: usize) -> Self {
        Self::new(input_width, output_width, Activation::Identity)
    }
}

/// Output head of a network.
///
/// Two-stream heads list their layers as: shared trunk, first stream, second
/// stream. For `Dueling` the first stream is the state value (width 1) and
/// the second the advantages; for `ActorCritic` the first stream is the
/// policy logits and the second the state value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    Single,
    Dueling,
    ActorCritic,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("network has no layers")]
    Empty,
    #[error("layer {index} has zero width")]
    ZeroWidth { index: usize },
    #[error("layer {index} expects {expected} inputs but receives {found}")]
    ChainMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("the final layer of every output stream must use the identity activation")]
    FinalRelu,
    #[error("invalid {head:?} layout: {reason}")]
    HeadLayout { head: Head, reason: String },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("gradient contains non-finite values")]
    NonFiniteGradient,
}

/// Q-values from a dueling head: `V + A - mean(A)`.
pub fn dueling_aggregate<T: Scalar>(value: T, advantages: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); advantages.len()];
    dueling_aggregate_into(value, advantages, &mut out);
    out
}

pub(crate) fn dueling_aggregate_into<T: Scalar>(value: T, advantages: &[T], out: &mut [T]) {
    let n = T::from_usize(advantages.len()).unwrap();
    let mean = advantages.iter().copied().sum::<T>() / n;
    for (q, &a) in out.iter_mut().zip(advantages) {
        *q = value + a - mean;
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}
