//! Floating-point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the geometry, loss and metric code is generic over (f32 or f64).
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
    /// Lossy conversion from an `f64` constant.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 constant representable")
    }

    /// Conversion from a grid index or count.
    fn of_usize(value: usize) -> Self {
        Self::from_usize(value).expect("index representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Orthonormality tolerance for rotations: 1e-9 for f64, a few ulps for f32.
    fn strict_tolerance() -> Self {
        Self::of(1e-9).max(Self::epsilon() * Self::of(16.0))
    }

    /// Largest deviation that is still repaired by re-orthonormalization.
    fn repair_tolerance() -> Self {
        Self::of(1e-6).max(Self::epsilon() * Self::of(128.0))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
