//! Scalar abstraction: the numeric code is generic over `f32`/`f64`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar used throughout the crate.
pub trait Scalar: RealField + FromPrimitive + ToPrimitive + Copy {
    /// Lossy conversion from `f64` (panics only for exotic scalar types).
    #[inline]
    fn fl(x: f64) -> Self {
        Self::from_f64(x).expect("scalar conversion from f64")
    }

    /// Lossy conversion to `f64`.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar conversion to f64")
    }

    /// Absolute value (disambiguates `Signed::abs` vs `ComplexField::abs`).
    #[inline]
    fn mag(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }
}

impl<T> Scalar for T where T: RealField + FromPrimitive + ToPrimitive + Copy {}

/// Numerically stable log-sum-exp of a slice.
pub fn log_sum_exp<F: Scalar>(vals: &[F]) -> F {
    let mut max = F::fl(f64::NEG_INFINITY);
    for &v in vals {
        if v > max {
            max = v;
        }
    }
    if !max.is_finite() {
        return max;
    }
    let mut sum = F::zero();
    for &v in vals {
        sum += (v - max).exp();
    }
    max + sum.ln()
}

/// Log-density of a univariate normal at `x`.
#[inline]
pub fn log_normal_pdf<F: Scalar>(x: F, mean: F, variance: F) -> F {
    let two = F::fl(2.0);
    let d = x - mean;
    -(F::two_pi() * variance).ln() / two - d * d / (two * variance)
}
