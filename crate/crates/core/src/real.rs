//! Scalar abstraction for the numeric core.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the numeric core is generic over.
///
/// Implemented for `f32` and `f64`. Persisted artifacts (checkpoints, CSV
/// reports) always store 64-bit values; generic code converts through `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    fn cast(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 constants are representable")
    }

    /// Widens this scalar to `f64`.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("real scalars widen to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Numerically stable logistic function `1 / (1 + exp(-z))`.
pub fn logistic<F: Real>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}
