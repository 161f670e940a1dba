//! Kronecker convolutions, tree-structured feature aggregation, and a
//! desk-scale semantic-segmentation harness.
//!
//! The crate is generic over the scalar type (`f64` by default, `f32` as an
//! optional fast mode); see [`scalar::Scalar`]. All verification tolerances
//! assume `f64`.

pub mod batchnorm;
pub mod conv2d;
pub mod error;
pub mod io;
pub mod kconv;
pub mod labels;
pub mod reference;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod tfa;
pub mod train;

pub use error::{Error, Result};
pub use labels::{LabelMap, SegSample};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::{allclose, concat_channels, CloseReport, Tensor4};

/// Default element type for verification and training.
pub type Tensor4F64 = Tensor4<f64>;
/// Optional fast-mode element type.
pub type Tensor4F32 = Tensor4<f32>;
