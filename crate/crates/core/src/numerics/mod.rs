//! Dense tensors, define-by-run reverse-mode differentiation, and the
//! optimizer used to train every model in the crate.
//!
//! Everything is generic over [`Real`] so that the same model code runs in
//! `f32` for training and in `f64` for finite-difference gradient checks.

mod graph;
mod kernels;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, NodeId};
pub use kernels::{axpy, dot};
pub use optim::{clip_gradients, global_norm, Adam, AdamConfig};
pub use params::{GradStore, ParamId, Params};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the engine computes in.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Standard SeLU constants.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn selu<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::of(SELU_SCALE) * x
    } else {
        F::of(SELU_SCALE * SELU_ALPHA) * (x.exp() - F::one())
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut out: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: F = out.iter().copied().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// `log(softmax(logits))` computed without forming the probabilities.
pub fn log_softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<F>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: PartialOrd + Copy>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
