use core::fmt::{Debug, Display};

use num_traits::{Float, NumAssign};

/// Floating-point scalar for signals, parameters and training state.
///
/// Implemented for `f32` and `f64`. Mesh geometry always stays in `f64`;
/// this trait only parameterizes the signal-processing stack so that a
/// single-precision mode is available for speed.
pub trait Scalar:
    Float + NumAssign + Debug + Display + Copy + Send + Sync + 'static
{
    /// Lossy conversion from `f64` (the only widening/narrowing point).
    fn from_f64(x: f64) -> Self;
    /// Widening conversion back to `f64` for reporting.
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}
