//! Scalar abstraction shared by every numerical routine.

use nalgebra as na;
use num_traits as nt;

/// Floating-point type the engine is generic over (`f32` or `f64`).
pub trait Real: na::RealField + Copy + nt::FromPrimitive + nt::ToPrimitive + Send + Sync {
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as nt::FromPrimitive>::from_f64(x).expect("literal representable")
    }

    /// Converts a count.
    #[inline]
    fn from_count(n: usize) -> Self {
        <Self as nt::FromPrimitive>::from_usize(n).expect("count representable")
    }

    /// Lossy conversion to `f64` for reporting.
    #[inline]
    fn as_f64(self) -> f64 {
        <Self as nt::ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
