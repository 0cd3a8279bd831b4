//! Convolution kernels on row-major slices, lowered to GEMM via im2col.
//!
//! Layouts:
//! * conv1d: input `[B, C_in, T]`, weight `[C_out, C_in, K]`, output `[B, C_out, T]`.
//! * conv2d: input `[B, C_in, H, W]`, weight `[C_out, C_in, K, K]`, output `[B, C_out, H, W]`.
//! * deconv2d: input `[B, C_in, H, W]`, weight `[C_in, C_out, K, K]`,
//!   output `[B, C_out, (H-1)s - 2p + K, (W-1)s - 2p + K]`.
//!
//! Stride-1 kernels use zero padding of `dilation * (K - 1) / 2` so the
//! spatial extent is preserved.

use crate::scalar::Scalar;
use crate::tensor::gemm;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl Conv1dDims {
    fn pad(&self) -> isize {
        (self.dilation * (self.kernel - 1) / 2) as isize
    }

    /// Valid output range `[t0, t1)` and input shift for tap `k`.
    #[inline]
    fn tap(&self, k: usize) -> (usize, usize, isize) {
        let shift = (k * self.dilation) as isize - self.pad();
        let t = self.len as isize;
        let t0 = (-shift).clamp(0, t) as usize;
        let t1 = (t - shift).clamp(0, t) as usize;
        (t0, t1.max(t0), shift)
    }
}

/// Unfolds one `[C_in, T]` sample into `[C_in * K, T]` shifted rows.
fn im2col_1d<S: Scalar>(d: &Conv1dDims, x: &[S], cols: &mut [S]) {
    let t = d.len;
    for c in 0..d.c_in {
        let xrow = &x[c * t..][..t];
        for k in 0..d.kernel {
            let row = &mut cols[(c * d.kernel + k) * t..][..t];
            let (t0, t1, shift) = d.tap(k);
            row[..t0].fill(S::zero());
            row[t1..].fill(S::zero());
            if t0 < t1 {
                row[t0..t1].copy_from_slice(
                    &xrow[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize],
                );
            }
        }
    }
}

/// Adjoint of [`im2col_1d`]: accumulates shifted rows back into `gx`.
fn col2im_1d<S: Scalar>(d: &Conv1dDims, cols: &[S], gx: &mut [S]) {
    let t = d.len;
    for c in 0..d.c_in {
        let grow = &mut gx[c * t..][..t];
        for k in 0..d.kernel {
            let row = &cols[(c * d.kernel + k) * t..][..t];
            let (t0, t1, shift) = d.tap(k);
            if t0 < t1 {
                let dst = &mut grow[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                dst.iter_mut().zip(&row[t0..t1]).for_each(|(g, &v)| *g += v);
            }
        }
    }
}

pub fn conv1d_forward<S: Scalar>(d: Conv1dDims, x: &[S], w: &[S], bias: &[S], out: &mut [S]) {
    let t = d.len;
    let ck = d.c_in * d.kernel;
    let identity = d.kernel == 1;
    let mut cols = vec![S::zero(); if identity { 0 } else { ck * t }];
    for b in 0..d.batch {
        let xb = &x[b * d.c_in * t..][..d.c_in * t];
        let ob = &mut out[b * d.c_out * t..][..d.c_out * t];
        for o in 0..d.c_out {
            ob[o * t..][..t].fill(bias[o]);
        }
        let src = if identity {
            xb
        } else {
            im2col_1d(&d, xb, &mut cols);
            &cols
        };
        gemm(false, false, d.c_out, ck, t, S::one(), w, src, S::one(), ob);
    }
}

/// Returns `(grad_x, grad_w, grad_bias)`.
pub fn conv1d_backward<S: Scalar>(
    d: Conv1dDims,
    x: &[S],
    w: &[S],
    grad: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let t = d.len;
    let ck = d.c_in * d.kernel;
    let identity = d.kernel == 1;
    let mut gx = vec![S::zero(); x.len()];
    let mut gw = vec![S::zero(); w.len()];
    let mut gb = vec![S::zero(); d.c_out];
    let mut cols = vec![S::zero(); if identity { 0 } else { ck * t }];
    let mut gcols = vec![S::zero(); if identity { 0 } else { ck * t }];
    for b in 0..d.batch {
        let xb = &x[b * d.c_in * t..][..d.c_in * t];
        let gb_rows = &grad[b * d.c_out * t..][..d.c_out * t];
        for o in 0..d.c_out {
            gb[o] += gb_rows[o * t..][..t].iter().copied().sum();
        }
        let gxb = &mut gx[b * d.c_in * t..][..d.c_in * t];
        if identity {
            gemm(
                false,
                true,
                d.c_out,
                t,
                ck,
                S::one(),
                gb_rows,
                xb,
                S::one(),
                &mut gw,
            );
            gemm(
                true,
                false,
                ck,
                d.c_out,
                t,
                S::one(),
                w,
                gb_rows,
                S::zero(),
                gxb,
            );
        } else {
            im2col_1d(&d, xb, &mut cols);
            gemm(
                false,
                true,
                d.c_out,
                t,
                ck,
                S::one(),
                gb_rows,
                &cols,
                S::one(),
                &mut gw,
            );
            gemm(
                true,
                false,
                ck,
                d.c_out,
                t,
                S::one(),
                w,
                gb_rows,
                S::zero(),
                &mut gcols,
            );
            col2im_1d(&d, &gcols, gxb);
        }
    }
    (gx, gw, gb)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl Conv2dDims {
    #[inline]
    fn range(n: usize, shift: isize) -> (usize, usize) {
        let n = n as isize;
        let lo = (-shift).clamp(0, n) as usize;
        let hi = (n - shift).clamp(0, n) as usize;
        (lo, hi.max(lo))
    }

    /// Calls `f(col_row, dy, dx, (y0, y1), (x0, x1))` for every tap of every input channel.
    fn for_each_tap(
        &self,
        mut f: impl FnMut(usize, usize, isize, isize, (usize, usize), (usize, usize)),
    ) {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        for c in 0..self.c_in {
            for ky in 0..k {
                let dy = ky as isize - pad;
                let yr = Self::range(self.height, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let xr = Self::range(self.width, dx);
                    f(c, (c * k + ky) * k + kx, dy, dx, yr, xr);
                }
            }
        }
    }
}

fn im2col_2d<S: Scalar>(d: &Conv2dDims, x: &[S], cols: &mut [S]) {
    let (h, wd) = (d.height, d.width);
    let plane = h * wd;
    d.for_each_tap(|c, row, dy, dx, (y0, y1), (x0, x1)| {
        let xplane = &x[c * plane..][..plane];
        let dst = &mut cols[row * plane..][..plane];
        if x0 == x1 || y0 == y1 {
            dst.fill(S::zero());
            return;
        }
        dst[..y0 * wd].fill(S::zero());
        dst[y1 * wd..].fill(S::zero());
        for y in y0..y1 {
            let line = &mut dst[y * wd..][..wd];
            line[..x0].fill(S::zero());
            line[x1..].fill(S::zero());
            let sy = (y as isize + dy) as usize;
            line[x0..x1]
                .copy_from_slice(&xplane[sy * wd + (x0 as isize + dx) as usize..][..x1 - x0]);
        }
    });
}

fn col2im_2d<S: Scalar>(d: &Conv2dDims, cols: &[S], gx: &mut [S]) {
    let (h, wd) = (d.height, d.width);
    let plane = h * wd;
    d.for_each_tap(|c, row, dy, dx, (y0, y1), (x0, x1)| {
        if x0 == x1 {
            return;
        }
        let src = &cols[row * plane..][..plane];
        let gplane = &mut gx[c * plane..][..plane];
        for y in y0..y1 {
            let sy = (y as isize + dy) as usize;
            let dst = &mut gplane[sy * wd + (x0 as isize + dx) as usize..][..x1 - x0];
            dst.iter_mut()
                .zip(&src[y * wd + x0..][..x1 - x0])
                .for_each(|(g, &v)| *g += v);
        }
    });
}

pub fn conv2d_forward<S: Scalar>(d: Conv2dDims, x: &[S], w: &[S], bias: &[S], out: &mut [S]) {
    let plane = d.height * d.width;
    let ckk = d.c_in * d.kernel * d.kernel;
    let mut cols = vec![S::zero(); ckk * plane];
    for b in 0..d.batch {
        let ob = &mut out[b * d.c_out * plane..][..d.c_out * plane];
        for o in 0..d.c_out {
            ob[o * plane..][..plane].fill(bias[o]);
        }
        im2col_2d(&d, &x[b * d.c_in * plane..][..d.c_in * plane], &mut cols);
        gemm(
            false,
            false,
            d.c_out,
            ckk,
            plane,
            S::one(),
            w,
            &cols,
            S::one(),
            ob,
        );
    }
}

pub fn conv2d_backward<S: Scalar>(
    d: Conv2dDims,
    x: &[S],
    w: &[S],
    grad: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let plane = d.height * d.width;
    let ckk = d.c_in * d.kernel * d.kernel;
    let mut gx = vec![S::zero(); x.len()];
    let mut gw = vec![S::zero(); w.len()];
    let mut gb = vec![S::zero(); d.c_out];
    let mut cols = vec![S::zero(); ckk * plane];
    for b in 0..d.batch {
        let gb_planes = &grad[b * d.c_out * plane..][..d.c_out * plane];
        for o in 0..d.c_out {
            gb[o] += gb_planes[o * plane..][..plane].iter().copied().sum();
        }
        im2col_2d(&d, &x[b * d.c_in * plane..][..d.c_in * plane], &mut cols);
        gemm(
            false,
            true,
            d.c_out,
            plane,
            ckk,
            S::one(),
            gb_planes,
            &cols,
            S::one(),
            &mut gw,
        );
        gemm(
            true,
            false,
            ckk,
            d.c_out,
            plane,
            S::one(),
            w,
            gb_planes,
            S::zero(),
            &mut cols,
        );
        col2im_2d(&d, &cols, &mut gx[b * d.c_in * plane..][..d.c_in * plane]);
    }
    (gx, gw, gb)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Deconv2dDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Deconv2dDims {
    pub fn out_height(&self) -> usize {
        (self.height - 1) * self.stride + self.kernel - 2 * self.pad
    }

    pub fn out_width(&self) -> usize {
        (self.width - 1) * self.stride + self.kernel - 2 * self.pad
    }

    /// Output coordinate reached from input index `i` through tap `k`.
    #[inline]
    fn target(&self, i: usize, k: usize, n_out: usize) -> Option<usize> {
        let v = (i * self.stride + k) as isize - self.pad as isize;
        (v >= 0 && (v as usize) < n_out).then_some(v as usize)
    }

    /// Calls `f(col_row, out_index, in_index)` for every in-range scatter
    /// target, where `col_row` indexes `[C_out * K * K]`.
    fn for_each_target(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (h, wd, k) = (self.height, self.width, self.kernel);
        let (ho, wo) = (self.out_height(), self.out_width());
        for o in 0..self.c_out {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (o * k + ky) * k + kx;
                    for iy in 0..h {
                        let Some(y) = self.target(iy, ky, ho) else {
                            continue;
                        };
                        for ix in 0..wd {
                            if let Some(xx) = self.target(ix, kx, wo) {
                                f(row, (o * ho + y) * wo + xx, iy * wd + ix);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn deconv2d_forward<S: Scalar>(d: Deconv2dDims, x: &[S], w: &[S], bias: &[S], out: &mut [S]) {
    let hw = d.height * d.width;
    let oplane = d.out_height() * d.out_width();
    let ckk = d.c_out * d.kernel * d.kernel;
    let mut cols = vec![S::zero(); ckk * hw];
    for b in 0..d.batch {
        let ob = &mut out[b * d.c_out * oplane..][..d.c_out * oplane];
        for o in 0..d.c_out {
            ob[o * oplane..][..oplane].fill(bias[o]);
        }
        gemm(
            true,
            false,
            ckk,
            d.c_in,
            hw,
            S::one(),
            w,
            &x[b * d.c_in * hw..][..d.c_in * hw],
            S::zero(),
            &mut cols,
        );
        d.for_each_target(|row, dst, src| ob[dst] += cols[row * hw + src]);
    }
}

pub fn deconv2d_backward<S: Scalar>(
    d: Deconv2dDims,
    x: &[S],
    w: &[S],
    grad: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let hw = d.height * d.width;
    let oplane = d.out_height() * d.out_width();
    let ckk = d.c_out * d.kernel * d.kernel;
    let mut gx = vec![S::zero(); x.len()];
    let mut gw = vec![S::zero(); w.len()];
    let mut gb = vec![S::zero(); d.c_out];
    let mut gcols = vec![S::zero(); ckk * hw];
    for b in 0..d.batch {
        let gplanes = &grad[b * d.c_out * oplane..][..d.c_out * oplane];
        for o in 0..d.c_out {
            gb[o] += gplanes[o * oplane..][..oplane].iter().copied().sum();
        }
        gcols.fill(S::zero());
        d.for_each_target(|row, src, dst| gcols[row * hw + dst] = gplanes[src]);
        let xb = &x[b * d.c_in * hw..][..d.c_in * hw];
        gemm(
            false,
            false,
            d.c_in,
            ckk,
            hw,
            S::one(),
            w,
            &gcols,
            S::zero(),
            &mut gx[b * d.c_in * hw..][..d.c_in * hw],
        );
        gemm(
            false,
            true,
            d.c_in,
            hw,
            ckk,
            S::one(),
            xb,
            &gcols,
            S::one(),
            &mut gw,
        );
    }
    (gx, gw, gb)
}
