//! Neural layers: dilated 1-D convolution, 2-D convolution, transposed 2-D
//! convolution, temporal normalization and parameter storage.
//!
//! Layers hold [`ParamId`]s into a [`ParamStore`]; a forward pass binds the
//! store to a graph and reads parameters through the resulting [`Bound`].

pub mod functional;
pub mod kernels;
mod layers;
mod params;

pub use functional::{conv1d, conv2d, deconv2d, temporal_norm};
pub use layers::{Conv1dLayer, Conv2dLayer, Deconv2dLayer, NormLayer, NORM_EPS};
pub use params::{he_uniform, Bound, ParamId, ParamInfo, ParamStore, CHECKPOINT_FORMAT};
