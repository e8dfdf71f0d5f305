//! Minimal dense/convolutional building blocks with hand-written backward passes.
//!
//! Activations are stored feature-major: a `[features, n]` row-major matrix
//! where `n` is the number of voxels. Backward functions always *accumulate*
//! into input gradients and parameter gradients; callers zero them first.

mod adam;
mod conv;
pub mod gemm;
mod linear;
mod norm;
pub mod params;

pub use adam::Adam;
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::{GroupNorm, NormCache};
pub use params::{ParamLayout, Slot, SlotId};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::real::Real;

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Swish / SiLU: `x·σ(x)`.
#[inline]
pub fn swish<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn swish_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

pub fn swish_forward<T: Real>(x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = swish(xi);
    }
}

pub fn swish_backward<T: Real>(x: &[T], dy: &[T], dx: &mut [T]) {
    for ((d, &xi), &g) in dx.iter_mut().zip(x).zip(dy) {
        *d += g * swish_grad(xi);
    }
}

/// `U(-1/√fan_in, 1/√fan_in)` fill.
pub fn fill_fan_in_uniform<T: Real, R: Rng>(values: &mut [T], fan_in: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    for v in values {
        *v = T::of(dist.sample(rng));
    }
}

pub fn fill_normal<T: Real, R: Rng>(values: &mut [T], std: f64, rng: &mut R) {
    let dist = Normal::new(0.0, std).expect("std is finite and non-negative");
    for v in values {
        *v = T::of(dist.sample(rng));
    }
}
