//! Scalar abstraction shared by the channel model, the link evaluator and the
//! networks.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Real scalar used throughout the crate: `f32`, `f64`, or a forward-mode
/// [`Dual`](crate::dual::Dual) over either.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    /// The value as `f64` (the primal part for dual numbers).
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance used by feasibility checks: `sqrt(eps)`.
    #[inline]
    fn check_tol() -> Self {
        Self::epsilon().sqrt()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Wraps an angle onto `[0, 2π)`.
pub fn wrap_phase<T: Real>(theta: T) -> T {
    let two_pi = T::TAU();
    let mut r = theta % two_pi;
    if r < T::zero() {
        r += two_pi;
    }
    // `r` can round up to exactly 2π for tiny negative inputs.
    if r >= two_pi {
        r = T::zero();
    }
    r
}
