//! Scalar abstraction for the vector math.
//!
//! Everything geometric in this crate (distances, centroids, quantization,
//! encoders) is written against [`Scalar`] so the same code runs in `f32`
//! (the shipped pipeline, matching the on-disk format) and `f64` (used by
//! precision-sensitive tests). Probabilities are always `f64` and are not
//! covered by this trait.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of context vectors.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 must convert")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar must widen to f64")
    }

    /// Narrow to the on-disk representation (stores are little-endian f32).
    fn to_stored(self) -> f32 {
        self.to_f32().expect("scalar must narrow to f32")
    }

    /// Widen from the on-disk representation.
    fn from_stored(v: f32) -> Self {
        Self::from_f32(v).expect("f32 must convert")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Sum
        + fmt::Debug
        + fmt::Display
        + Send
        + Sync
        + 'static
{
}
