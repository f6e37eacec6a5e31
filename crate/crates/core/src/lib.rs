//! Reverse-distillation anomaly detection with a GRN-equipped large-kernel
//! autoencoder, adaptive hard-mining losses, cosine anomaly maps and the
//! seven-metric evaluation protocol.
//!
//! All numerical code is generic over [`Scalar`] (`f32` for training and
//! inference, `f64` for gradient checks). Concrete aliases for both widths
//! live at the crate root.

pub mod anomaly;
pub mod diagnostics;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use error::{Error, Result};

/// Floating point element type used by every tensor in the crate.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// Tag written into weight-archive manifests.
    const DTYPE: &'static str;
    /// Width in bytes of the little-endian encoding.
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type FeaturePyramid32 = model::FeaturePyramid<f32>;
pub type FeaturePyramid64 = model::FeaturePyramid<f64>;
pub type AnomalyMap32 = anomaly::AnomalyMap<f32>;
pub type AnomalyMap64 = anomaly::AnomalyMap<f64>;
pub type Block32 = model::Block<f32>;
pub type Block64 = model::Block<f64>;
