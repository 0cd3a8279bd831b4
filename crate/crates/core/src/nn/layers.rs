use rand::Rng;

use super::functional;
use super::params::{he_uniform, Bound, ParamId, ParamStore};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

/// Length-preserving dilated 1-D convolution, stride 1.
#[derive(Clone, Debug)]
pub struct Conv1dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl Conv1dLayer {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        assert!(
            kernel % 2 == 1 && dilation >= 1,
            "conv1d needs odd kernel and dilation >= 1"
        );
        let w = he_uniform(
            &[out_channels, in_channels, kernel],
            in_channels * kernel,
            rng,
        );
        let weight = store.add(format!("{name}.weight"), "conv1d", w);
        let bias = store.add(
            format!("{name}.bias"),
            "conv1d",
            Tensor::zeros([out_channels]),
        );
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            dilation,
        }
    }

    pub fn forward<'g, S: Scalar>(&self, p: &Bound<'g, S>, x: Var<'g, S>) -> Result<Var<'g, S>> {
        functional::conv1d(x, p.get(self.weight), p.get(self.bias), self.dilation)
    }
}

/// Size-preserving 2-D convolution with an odd square kernel.
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2dLayer {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv2d needs an odd kernel");
        let w = he_uniform(
            &[out_channels, in_channels, kernel, kernel],
            in_channels * kernel * kernel,
            rng,
        );
        let weight = store.add(format!("{name}.weight"), "conv2d", w);
        let bias = store.add(
            format!("{name}.bias"),
            "conv2d",
            Tensor::zeros([out_channels]),
        );
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn forward<'g, S: Scalar>(&self, p: &Bound<'g, S>, x: Var<'g, S>) -> Result<Var<'g, S>> {
        functional::conv2d(x, p.get(self.weight), p.get(self.bias))
    }
}

/// Transposed convolution, kernel 4, stride 2, padding 1: exactly doubles
/// both spatial extents.
#[derive(Clone, Debug)]
pub struct Deconv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Deconv2dLayer {
    pub const KERNEL: usize = 4;
    pub const STRIDE: usize = 2;
    pub const PAD: usize = 1;

    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let k = Self::KERNEL;
        // Each output pixel receives (K / stride)^2 taps per input channel.
        let fan_in = in_channels * (k / Self::STRIDE) * (k / Self::STRIDE);
        let w = he_uniform(&[in_channels, out_channels, k, k], fan_in, rng);
        let weight = store.add(format!("{name}.weight"), "deconv2d", w);
        let bias = store.add(
            format!("{name}.bias"),
            "deconv2d",
            Tensor::zeros([out_channels]),
        );
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
        }
    }

    pub fn forward<'g, S: Scalar>(&self, p: &Bound<'g, S>, x: Var<'g, S>) -> Result<Var<'g, S>> {
        functional::deconv2d(
            x,
            p.get(self.weight),
            p.get(self.bias),
            Self::STRIDE,
            Self::PAD,
        )
    }
}

/// Temporal standardization with a learned per-channel affine map.
#[derive(Clone, Debug)]
pub struct NormLayer {
    pub scale: ParamId,
    pub shift: ParamId,
    pub channels: usize,
    pub eps: f64,
}

impl NormLayer {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, channels: usize) -> Self {
        let scale = store.add(
            format!("{name}.scale"),
            "norm",
            Tensor::full([channels], S::one()),
        );
        let shift = store.add(format!("{name}.shift"), "norm", Tensor::zeros([channels]));
        Self {
            scale,
            shift,
            channels,
            eps: NORM_EPS,
        }
    }

    pub fn forward<'g, S: Scalar>(&self, p: &Bound<'g, S>, x: Var<'g, S>) -> Result<Var<'g, S>> {
        functional::temporal_norm(x, p.get(self.scale), p.get(self.shift), self.eps)
    }
}
