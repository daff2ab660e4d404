//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive};

/// Real floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossless-enough conversion from an `f64` literal.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable in scalar type")
    }

    /// Widening conversion used for diagnostics and error payloads.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Replaces `y` by `sign(y) * max(|y|, floor)`, with `sign(0) = +1`.
pub fn floored<T: Real>(y: T, floor: T) -> T {
    if y.abs() >= floor {
        y
    } else if y < T::zero() {
        -floor
    } else {
        floor
    }
}
