//! Scalar abstraction shared by every numerical module.

use nalgebra::RealField;
use num_traits::{FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the dynamics, filters and identifiers are written against.
///
/// Implemented for `f32` and `f64`. The closed-loop scenarios and the
/// unscented filter need `f64` to meet their tolerances; `f32` is useful for
/// the structural pieces (matrices, allocation, blending).
pub trait Real: RealField + Copy + FloatConst + FromPrimitive + ToPrimitive {}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

#[inline]
pub(crate) fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Standard gravity in ft/s².
pub const GRAVITY_FT_S2: f64 = 32.174;

/// Pounds-mass per slug.
pub const LBM_PER_SLUG: f64 = 32.174_048_56;
