//! Working-precision scalar abstraction.
//!
//! All numerical code in this crate is generic over [`Scalar`], implemented
//! for `f32` and `f64`. Activation files and checkpoints always store `f32`;
//! values are widened (or kept) at load time.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type usable as the engine's working precision.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for finite inputs.
    fn lit(v: f64) -> Self;

    /// Widens a stored `f32` value.
    fn widen(v: f32) -> Self;

    /// Narrows to the `f32` storage precision.
    fn narrow(self) -> f32;

    fn as_f64(self) -> f64;

    /// Short precision tag used in reports ("f32" / "f64").
    const NAME: &'static str;
}

impl Scalar for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn widen(v: f32) -> Self {
        v
    }
    #[inline]
    fn narrow(self) -> f32 {
        self
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn widen(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn narrow(self) -> f32 {
        self as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    const NAME: &'static str = "f64";
}
