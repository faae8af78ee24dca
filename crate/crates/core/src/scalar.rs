//! Floating-point scalar abstraction.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar type used throughout the crate.
///
/// Implemented for `f32` and `f64`. The bound collects everything the
/// numeric kernels need: IEEE float semantics, compound assignment,
/// summation, and conversion from literal constants.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an `f64` constant to `T`, panicking only for exotic scalar types
/// that cannot represent ordinary constants (never for `f32`/`f64`).
#[inline]
pub(crate) fn fl<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("constant not representable in scalar type")
}

/// Convert a `usize` to `T`.
#[inline]
pub(crate) fn fu<T: Scalar>(v: usize) -> T {
    T::from_usize(v).expect("count not representable in scalar type")
}
