//! Scalar abstraction for everything that carries voltage or correlation
//! values. The toolkit computes with `f32` or `f64`; the trait pins down the
//! bounds the analysis code actually needs so the choice stays open.

use std::fmt::Display;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use rustfft::FftNum;

/// Floating-point scalar usable for trace samples, leakage hypotheses and
/// correlation values.
pub trait Real: Float + FftNum + FromPrimitive + NumAssign + Sum + Display {
    /// Lossless widening into `f64` (both supported scalars widen exactly).
    fn as_f64(self) -> f64;

    /// Conversion from `f64`, rounding to the nearest representable value.
    fn from_f64_rounded(v: f64) -> Self;
}

impl Real for f32 {
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64_rounded(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    #[inline]
    fn from_f64_rounded(v: f64) -> Self {
        v
    }
}
