//! Floating-point scalar abstraction shared by every numeric module.
//!
//! Training runs at `f32`; the gradient-check harness runs the identical
//! graph at `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Tag stored in checkpoint headers and reports.
    const DTYPE: &'static str;

    fn erf(self) -> Self;

    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("float converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
}
