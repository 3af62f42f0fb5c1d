//! Floating-point abstraction shared by the geometric and transport code.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar type the library is generic over (`f32` or `f64`).
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Default
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Tolerance for "weights sum to one".
    const WEIGHT_TOL: f64;
    /// Relative slack used when comparing distances against radii.
    const DIST_RTOL: f64;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable")
    }
}

impl Scalar for f64 {
    const WEIGHT_TOL: f64 = 1e-12;
    const DIST_RTOL: f64 = 1e-12;
}

impl Scalar for f32 {
    const WEIGHT_TOL: f64 = 1e-5;
    const DIST_RTOL: f64 = 1e-6;
}
