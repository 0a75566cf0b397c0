//! Scalar abstraction for the numeric substrate.
//!
//! Everything in [`crate::numerics`] is generic over a floating-point scalar
//! so the same tape and models run in `f32` or `f64`. The crate-level aliases
//! (see `lib.rs`) pin `f64` as the working precision for the rest of the
//! laboratory.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the tape, models, and optimizers.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Convert from `f64`, panicking only for values no float can hold.
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 value not representable in scalar type")
    }

    /// Widen to `f64` (exact for `f32` and `f64`).
    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar not representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable logistic function.
pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Stable `ln(1 + exp(z))`.
pub fn softplus<S: Scalar>(z: S) -> S {
    z.max(S::zero()) + (-z.abs()).exp().ln_1p()
}
