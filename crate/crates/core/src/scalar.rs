//! Scalar abstraction shared by every numerical module.
//!
//! The crate is written once over [`Scalar`] and instantiated for `f64`
//! (the default used by training and the theory checks) and `f32`.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use ndarray::{LinalgScalar, ScalarOperand};

/// Real floating-point scalar usable both by the ndarray-backed tape and by
/// the nalgebra-backed linear algebra of the theory lab.
pub trait Scalar:
    RealField + Copy + LinalgScalar + ScalarOperand + Debug + Display + Default + Send + Sync
{
    /// Lossy conversion from `f64` constants.
    #[inline]
    fn of(x: f64) -> Self {
        nalgebra::convert(x)
    }

    /// Widening conversion used for reporting and serialization.
    fn to_f64(self) -> f64;

    fn is_finite_value(self) -> bool {
        self.to_f64().is_finite()
    }

    /// Raw bit pattern widened to 64 bits, for bit-exact comparisons.
    fn bits(self) -> u64;
}

impl Scalar for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }

    fn bits(self) -> u64 {
        self.to_bits()
    }
}

impl Scalar for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }

    fn bits(self) -> u64 {
        self.to_bits() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(<f64 as Scalar>::of(0.1), 0.1);
        assert_eq!(<f32 as Scalar>::of(0.5).to_f64(), 0.5);
        assert!(!<f64 as Scalar>::of(f64::NAN).is_finite_value());
    }
}
