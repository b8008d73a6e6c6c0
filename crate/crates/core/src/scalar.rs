//! Floating-point scalar abstraction shared by the tensor engine, the
//! optimizer and the closed-form divergences.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};

/// Element type of a [`Tensor`](crate::autodiff::Tensor).
///
/// Implemented for `f32` and `f64`. Models in this crate are instantiated
/// with `f64`; gradient checks at `1e-4` relative tolerance are not
/// reliable in single precision.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Copy + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// `ln(1 + e^x)` without overflow for large `|x|`.
    fn softplus(self) -> Self {
        let zero = Self::zero();
        self.max(zero) + (-self.abs()).exp().ln_1p()
    }

    fn sigmoid(self) -> Self {
        let one = Self::one();
        if self >= Self::zero() {
            one / (one + (-self).exp())
        } else {
            let e = self.exp();
            e / (one + e)
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(0.0f64.sigmoid(), 0.5);
        assert!((800.0f64).sigmoid() <= 1.0);
        assert!((-800.0f64).sigmoid() >= 0.0);
        assert!((-800.0f64).sigmoid().is_finite());
        assert_eq!(0.0f32.sigmoid(), 0.5);
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 4.0] {
            let naive = (1.0 + x.exp()).ln();
            assert!((x.softplus() - naive).abs() < 1e-12);
        }
        assert!((1000.0f64.softplus() - 1000.0).abs() < 1e-9);
    }
}
