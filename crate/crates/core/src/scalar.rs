//! Floating-point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used by scores, losses and gradients.
///
/// Implemented for `f32` and `f64`. Counts coming from text statistics are
/// converted through [`Scalar::of`].
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal or count into the scalar type.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 converts to any float scalar")
    }

    fn from_count(count: usize) -> Self {
        Self::of(count as f64)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Checks that `value` lies in `[lo, hi]`, reporting `name` otherwise.
pub(crate) fn check_unit<F: Scalar>(name: &'static str, value: F, lo: f64, hi: f64) -> crate::Result<F> {
    let v = value.as_f64();
    if v.is_nan() || v < lo || v > hi {
        return Err(crate::Error::OutOfRange {
            name,
            value: v,
            lo,
            hi,
        });
    }
    Ok(value)
}
