//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the workbench can run on: `f32` or `f64`.
///
/// The tolerances quoted throughout the crate assume `f64`; `f32` builds
/// compile and run but only meet correspondingly looser bounds.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + std::fmt::LowerExp
    + Default
    + Send
    + Sync
    + rustfft::FftNum
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn two_pi() -> Self {
        Self::TAU()
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    /// Reduce `x` modulo 1 into `[-1/2, 1/2)`.
    #[inline]
    fn wrap_torus(self) -> Self {
        let r = self - (self + Self::half()).floor();
        if r >= Self::half() {
            r - Self::one()
        } else {
            r
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Periodic distance between two torus coordinates.
#[inline]
pub fn torus_distance<T: Real>(a: T, b: T) -> T {
    (a - b).wrap_torus().abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_lands_in_half_open_interval() {
        for &x in &[-3.5, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0, 2.49999, 7.5] {
            let r = f64::wrap_torus(x);
            assert!((-0.5..0.5).contains(&r), "{x} -> {r}");
            assert!(((x - r) - (x - r).round()).abs() < 1e-12);
        }
        assert_eq!(f64::wrap_torus(0.5), -0.5);
        assert_eq!(f32::wrap_torus(1.25), 0.25);
    }

    #[test]
    fn torus_distance_wraps() {
        assert!((torus_distance(0.49, -0.49) - 0.02f64).abs() < 1e-12);
    }
}
