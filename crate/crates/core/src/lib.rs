//! Dual context aggregation network (DCAN) for temporal action proposal
//! generation.
//!
//! The crate bundles everything the pipeline needs at desk scale:
//!
//! * [`tensor`]: dense tensors and a record-on-execute reverse-mode tape.
//! * [`nn`]: dilated 1-D convolution, 2-D convolution, transposed
//!   convolution, temporal normalization and parameter handling.
//! * [`model`]: base network, multi-path temporal context aggregation and
//!   coarse-to-fine matching.
//! * [`rfanalyze`]: exact receptive-field index-set propagation.
//! * [`labels`], [`loss`]: ground-truth generation and the multitask objective.
//! * [`inference`], [`eval`]: score fusion, Soft-NMS, AR@AN/AUC/mAP.
//! * [`data`]: feature ingestion, rescaling, windowing, synthetic corpora.
//! * [`cli`]: configuration, training, inference and evaluation commands.
//!
//! The numeric core is generic over the scalar type ([`Scalar`]); the
//! aliases below pin the common instantiations.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Graph ops return `Var` handles by value and are not operator impls.
#![allow(clippy::should_implement_trait)]

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod inference;
pub mod labels;
pub mod loss;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rfanalyze;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision tensor, the default used throughout the pipeline.
pub type Tensor = tensor::Tensor<f64>;
/// Single-precision tensor.
pub type Tensor32 = tensor::Tensor<f32>;
/// Double-precision differentiation tape.
pub type Graph = tensor::Graph<f64>;
/// Double-precision parameter store.
pub type ParamStore = nn::ParamStore<f64>;
/// Double-precision network.
pub type Dcan = model::Dcan<f64>;
/// Single-precision network.
pub type Dcan32 = model::Dcan<f32>;
/// Double-precision network outputs.
pub type ForwardOutput = model::ForwardOutput<f64>;
