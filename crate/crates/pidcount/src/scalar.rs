//! Scalar abstraction for the numeric core.
//!
//! Everything that touches network math (tensors, autodiff, the model, the
//! optimizer) is generic over [`Scalar`] so the same code runs in f32 for
//! training and in f64 where extra precision pays off, most notably
//! finite-difference gradient checks. Concrete aliases live at the crate
//! root (`Tensor32`, `Graph64`, ...).

use std::fmt::{Debug, Display};

use num_traits::{Float, NumAssign, NumCast, ToPrimitive};
use rand::distributions::uniform::SampleUniform;

/// Floating-point element type for tensors and network parameters.
pub trait Scalar:
    Float + NumAssign + SampleUniform + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an f64 constant (hyperparameter, tolerance) into `Self`.
    fn from_f64(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("finite f64 constant")
    }

    /// Widens to f64 for reporting and cross-type math.
    fn to_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar is representable as f64")
    }

    /// Narrows to f32 for the on-disk checkpoint encoding.
    fn to_f32(self) -> f32 {
        ToPrimitive::to_f32(&self).expect("scalar is representable as f32")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_roundtrip_through_f64_is_exact() {
        let xs = [0.0f32, 1.0, -1.5, 3.25e-7, f32::MAX, f32::MIN_POSITIVE];
        for &x in &xs {
            assert_eq!(<f32 as Scalar>::from_f64(x.to_f64()), x);
        }
    }

    #[test]
    fn constants_materialize_in_both_widths() {
        assert_eq!(<f32 as Scalar>::from_f64(0.5), 0.5f32);
        assert_eq!(<f64 as Scalar>::from_f64(0.5), 0.5f64);
    }
}
