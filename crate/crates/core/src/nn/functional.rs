//! Differentiable layer primitives recorded on the tape.

use super::kernels::{self, Conv1dDims, Conv2dDims, Deconv2dDims};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Length-preserving dilated 1-D cross-correlation.
///
/// `x: [B, C_in, T]`, `weight: [C_out, C_in, K]` with odd `K`, `bias: [C_out]`.
pub fn conv1d<'g, S: Scalar>(
    x: Var<'g, S>,
    weight: Var<'g, S>,
    bias: Var<'g, S>,
    dilation: usize,
) -> Result<Var<'g, S>> {
    let (dims, out) = {
        let xv = x.value();
        let wv = weight.value();
        let bv = bias.value();
        let (&[batch, c_in, len], &[c_out, wc_in, kernel]) = (xv.shape(), wv.shape()) else {
            return Err(Error::dim(format!(
                "conv1d expects [B, C, T] input and [O, C, K] weight, got {:?} and {:?}",
                xv.shape(),
                wv.shape()
            )));
        };
        if c_in != wc_in {
            return Err(Error::dim(format!(
                "conv1d channel mismatch: input {c_in}, weight {wc_in}"
            )));
        }
        if bv.shape() != [c_out] {
            return Err(Error::dim(format!(
                "conv1d bias shape {:?}, expected [{c_out}]",
                bv.shape()
            )));
        }
        if kernel % 2 == 0 || dilation == 0 || len == 0 {
            return Err(Error::dim(format!(
                "conv1d needs odd kernel, dilation >= 1 and T >= 1 (k={kernel}, r={dilation}, T={len})"
            )));
        }
        let dims = Conv1dDims {
            batch,
            c_in,
            c_out,
            len,
            kernel,
            dilation,
        };
        let mut out = vec![S::zero(); batch * c_out * len];
        kernels::conv1d_forward(dims, xv.data(), wv.data(), bv.data(), &mut out);
        (dims, Tensor::new([batch, c_out, len], out)?)
    };
    Ok(x.graph().record(
        out,
        &[x, weight, bias],
        Box::new(move |args| {
            let (gx, gw, gb) = kernels::conv1d_backward(
                dims,
                args.inputs[0].data(),
                args.inputs[1].data(),
                args.grad,
            );
            vec![Some(gx), Some(gw), Some(gb)]
        }),
    ))
}

/// Size-preserving 2-D cross-correlation with an odd square kernel.
pub fn conv2d<'g, S: Scalar>(
    x: Var<'g, S>,
    weight: Var<'g, S>,
    bias: Var<'g, S>,
) -> Result<Var<'g, S>> {
    let (dims, out) = {
        let xv = x.value();
        let wv = weight.value();
        let bv = bias.value();
        let (&[batch, c_in, height, width], &[c_out, wc_in, kh, kw]) = (xv.shape(), wv.shape())
        else {
            return Err(Error::dim(format!(
                "conv2d expects [B, C, H, W] input and [O, C, K, K] weight, got {:?} and {:?}",
                xv.shape(),
                wv.shape()
            )));
        };
        if c_in != wc_in || kh != kw || kh % 2 == 0 || bv.shape() != [c_out] {
            return Err(Error::dim(format!(
                "conv2d shapes incompatible: input {:?}, weight {:?}, bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let dims = Conv2dDims {
            batch,
            c_in,
            c_out,
            height,
            width,
            kernel: kh,
        };
        let mut out = vec![S::zero(); batch * c_out * height * width];
        kernels::conv2d_forward(dims, xv.data(), wv.data(), bv.data(), &mut out);
        (dims, Tensor::new([batch, c_out, height, width], out)?)
    };
    Ok(x.graph().record(
        out,
        &[x, weight, bias],
        Box::new(move |args| {
            let (gx, gw, gb) = kernels::conv2d_backward(
                dims,
                args.inputs[0].data(),
                args.inputs[1].data(),
                args.grad,
            );
            vec![Some(gx), Some(gw), Some(gb)]
        }),
    ))
}

/// Transposed 2-D convolution. `weight: [C_in, C_out, K, K]`.
pub fn deconv2d<'g, S: Scalar>(
    x: Var<'g, S>,
    weight: Var<'g, S>,
    bias: Var<'g, S>,
    stride: usize,
    pad: usize,
) -> Result<Var<'g, S>> {
    let (dims, out) = {
        let xv = x.value();
        let wv = weight.value();
        let bv = bias.value();
        let (&[batch, c_in, height, width], &[wc_in, c_out, kh, kw]) = (xv.shape(), wv.shape())
        else {
            return Err(Error::dim(format!(
                "deconv2d expects [B, C, H, W] input and [C, O, K, K] weight, got {:?} and {:?}",
                xv.shape(),
                wv.shape()
            )));
        };
        if c_in != wc_in || kh != kw || bv.shape() != [c_out] || height == 0 || width == 0 {
            return Err(Error::dim(format!(
                "deconv2d shapes incompatible: input {:?}, weight {:?}, bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        if stride == 0 || 2 * pad >= kh + (height.min(width) - 1) * stride {
            return Err(Error::dim(format!(
                "deconv2d stride {stride} / pad {pad} leave no output"
            )));
        }
        let dims = Deconv2dDims {
            batch,
            c_in,
            c_out,
            height,
            width,
            kernel: kh,
            stride,
            pad,
        };
        let (ho, wo) = (dims.out_height(), dims.out_width());
        let mut out = vec![S::zero(); batch * c_out * ho * wo];
        kernels::deconv2d_forward(dims, xv.data(), wv.data(), bv.data(), &mut out);
        (dims, Tensor::new([batch, c_out, ho, wo], out)?)
    };
    Ok(x.graph().record(
        out,
        &[x, weight, bias],
        Box::new(move |args| {
            let (gx, gw, gb) = kernels::deconv2d_backward(
                dims,
                args.inputs[0].data(),
                args.inputs[1].data(),
                args.grad,
            );
            vec![Some(gx), Some(gw), Some(gb)]
        }),
    ))
}

/// Per-(sample, channel) standardization over the temporal axis followed by
/// a per-channel affine map. `x: [B, C, T]`, `scale`, `shift: [C]`.
pub fn temporal_norm<'g, S: Scalar>(
    x: Var<'g, S>,
    scale: Var<'g, S>,
    shift: Var<'g, S>,
    eps: f64,
) -> Result<Var<'g, S>> {
    let eps = S::lit(eps);
    let (shape, out) = {
        let xv = x.value();
        let &[batch, channels, len] = xv.shape() else {
            return Err(Error::dim(format!(
                "norm expects [B, C, T], got {:?}",
                xv.shape()
            )));
        };
        if len < 2 {
            return Err(Error::Numeric(format!(
                "norm over T = {len}: variance is degenerate"
            )));
        }
        if scale.value().shape() != [channels] || shift.value().shape() != [channels] {
            return Err(Error::dim("norm affine parameters must have shape [C]"));
        }
        let (sc, sh) = (scale.value(), shift.value());
        let mut out = vec![S::zero(); xv.numel()];
        for (row, (src, dst)) in xv.data().chunks(len).zip(out.chunks_mut(len)).enumerate() {
            let c = row % channels;
            let (mean, inv) = moments(src, eps);
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - mean) * inv * sc.data()[c] + sh.data()[c];
            }
        }
        (
            vec![batch, channels, len],
            Tensor::new([batch, channels, len], out)?,
        )
    };
    Ok(x.graph().record(
        out,
        &[x, scale, shift],
        Box::new(move |args| {
            let (channels, len) = (shape[1], shape[2]);
            let x = args.inputs[0].data();
            let sc = args.inputs[1].data();
            let n = S::lit(len as f64);
            let mut gx = vec![S::zero(); x.len()];
            let mut gscale = vec![S::zero(); channels];
            let mut gshift = vec![S::zero(); channels];
            for (row, (src, g)) in x.chunks(len).zip(args.grad.chunks(len)).enumerate() {
                let c = row % channels;
                let (mean, inv) = moments(src, eps);
                let mut sum_g = S::zero();
                let mut sum_gx = S::zero();
                for (&v, &gv) in src.iter().zip(g) {
                    let xhat = (v - mean) * inv;
                    gscale[c] += gv * xhat;
                    gshift[c] += gv;
                    sum_g += gv;
                    sum_gx += gv * xhat;
                }
                let (mg, mgx) = (sum_g * sc[c] / n, sum_gx * sc[c] / n);
                let dst = &mut gx[row * len..(row + 1) * len];
                for ((d, &v), &gv) in dst.iter_mut().zip(src).zip(g) {
                    let xhat = (v - mean) * inv;
                    *d = inv * (gv * sc[c] - mg - xhat * mgx);
                }
            }
            vec![Some(gx), Some(gscale), Some(gshift)]
        }),
    ))
}

fn moments<S: Scalar>(row: &[S], eps: S) -> (S, S) {
    let n = S::lit(row.len() as f64);
    let mean = row.iter().copied().sum::<S>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
    (mean, S::one() / (var + eps).sqrt())
}
