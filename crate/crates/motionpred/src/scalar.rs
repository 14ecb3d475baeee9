//! Scalar abstraction for the numeric core.
//!
//! The tensor and autodiff layers are generic over [`Scalar`] so the same
//! code instantiates at `f32` and `f64`. Everything downstream of the model
//! uses the `f64` aliases exported from the crate root; 64-bit precision is
//! what makes the finite-difference gradient checks meaningful.

use num_traits::Float;

/// Floating-point element type usable by tensors and the tape.
pub trait Scalar: Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static {
    /// Converts an `f64` constant into this type, rounding if narrower.
    fn from_f64(v: f64) -> Self;

    /// Widens this value to `f64` (exact for both supported types).
    /// Named to avoid clashing with `ToPrimitive::to_f64` from the `Float`
    /// supertrait chain.
    fn into_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> f32 {
        v as f32
    }

    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> f64 {
        v
    }

    fn into_f64(self) -> f64 {
        self
    }
}
