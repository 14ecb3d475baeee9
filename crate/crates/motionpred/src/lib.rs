//! Desk-scale laboratory for short-horizon human motion prediction.
//!
//! The crate is organised in four layers:
//!
//! - a verifiable numeric core: plain tensors ([`tensor`]), reverse-mode
//!   autodiff on an explicit tape ([`tape`]), parameter stores ([`param`]),
//!   Adam ([`optim`]), and finite-difference gradient checking
//!   ([`gradcheck`]);
//! - the prediction network ([`model`]): a graph-attention encoder over
//!   skeleton joints with temporal convolutions, and a lightweight decoder;
//! - training objectives and evaluation metrics ([`losses`], [`metrics`]);
//! - motion data handling ([`data`], [`synth`], [`config`]) and the
//!   train/eval/predict/gradcheck harness behind the CLI ([`harness`]).
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`).
//! Everything above it runs in `f64` through the aliases below; gradient
//! checks against central differences only separate signal from roundoff
//! at 64-bit precision.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod param;
pub mod scalar;
pub mod synth;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use param::{backward_into, BoundParams, ParamId};
pub use scalar::Scalar;
pub use tape::VarId;

/// Dense `f64` tensor, the working type of the whole pipeline.
pub type Tensor = tensor::TensorBase<f64>;

/// Single-precision tensor, for callers that trade accuracy for memory.
pub type Tensor32 = tensor::TensorBase<f32>;

/// `f64` autodiff tape.
pub type Tape = tape::Tape<f64>;

/// Gradients from one backward sweep over a [`Tape`].
pub type Gradients = tape::Gradients<f64>;

/// Named collection of `f64` parameters.
pub type ParamStore = param::ParamStore<f64>;

/// Adam state for an `f64` [`ParamStore`].
pub type AdamState = optim::AdamState<f64>;
