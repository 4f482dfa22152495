//! Scalar abstraction so the numeric core works with f32 or f64.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar used throughout the numeric core.
///
/// The default build (CLI, benchmark harness, file formats) uses `f64`;
/// `f32` is supported for callers that want the smaller footprint.
pub trait Real:
    nalgebra::RealField + Copy + Default + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Convert an `f64` literal to the generic scalar.
#[inline]
pub fn real<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("literal convertible to scalar")
}

/// Convert the generic scalar back to `f64` (diagnostics, file output).
#[inline]
pub fn to_f64<R: Real>(x: R) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}
