//! Group sampling: every `G x G` block of matching cells becomes one group
//! whose feature is sampled uniformly over the union of the block's intervals.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Linear-interpolation read at a fractional grid position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    /// Weight of `hi`; `lo` gets `1 - frac`.
    pub frac: f64,
}

/// Precomputed sample positions for every group of the `D/G x T/G` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingPlan {
    pub temporal_len: usize,
    pub group_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub n_sample: usize,
    /// Row-major over `(row, col)`; `None` marks groups reaching past the clip.
    pub groups: Vec<Option<Vec<Tap>>>,
}

impl SamplingPlan {
    pub fn new(
        temporal_len: usize,
        max_duration: usize,
        group_size: usize,
        n_sample: usize,
    ) -> Self {
        let (t, g) = (temporal_len, group_size);
        let rows = max_duration / g;
        let cols = t / g;
        let mut groups = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                groups.push(Self::taps(t, g, n_sample, i, j));
            }
        }
        Self {
            temporal_len: t,
            group_size: g,
            rows,
            cols,
            n_sample,
            groups,
        }
    }

    /// Normalized sampling interval `[s, e]` of group `(i, j)`.
    pub fn bounds(temporal_len: usize, group_size: usize, i: usize, j: usize) -> (f64, f64) {
        let t = temporal_len as f64;
        let s = (j * group_size) as f64 / t;
        (s, s + ((i + 1) * group_size) as f64 / t)
    }

    /// Whether group `(i, j)` stays inside the clip (`e <= 1`).
    pub fn group_valid(temporal_len: usize, group_size: usize, i: usize, j: usize) -> bool {
        (j + i + 1) * group_size <= temporal_len
    }

    fn taps(t: usize, g: usize, n: usize, i: usize, j: usize) -> Option<Vec<Tap>> {
        if !Self::group_valid(t, g, i, j) {
            return None;
        }
        let (s, e) = Self::bounds(t, g, i, j);
        let last = (t - 1) as f64;
        Some(
            (0..n)
                .map(|k| {
                    let pos = (s + (e - s) * k as f64 / (n - 1) as f64) * last;
                    let pos = pos.clamp(0.0, last);
                    let lo = pos.floor() as usize;
                    let hi = (lo + 1).min(t - 1);
                    Tap {
                        lo,
                        hi,
                        frac: pos - lo as f64,
                    }
                })
                .collect(),
        )
    }

    pub fn num_groups(&self) -> usize {
        self.rows * self.cols
    }

    /// Temporal positions read by group `(i, j)`.
    pub fn support(&self, i: usize, j: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.groups[i * self.cols + j]
            .iter()
            .flatten()
            .flat_map(|tap| {
                let mut v = vec![];
                if tap.frac < 1.0 {
                    v.push(tap.lo);
                }
                if tap.frac > 0.0 {
                    v.push(tap.hi);
                }
                v
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// `f: [B, C, T] -> [B, C, N_sample, D/G, T/G]`; invalid groups are zero.
pub fn group_sample<'g, S: Scalar>(f: Var<'g, S>, plan: &Arc<SamplingPlan>) -> Result<Var<'g, S>> {
    let (out, batch, channels) = {
        let fv = f.value();
        let &[batch, channels, len] = fv.shape() else {
            return Err(Error::dim(format!(
                "group_sample expects [B, C, T], got {:?}",
                fv.shape()
            )));
        };
        if len != plan.temporal_len {
            return Err(Error::dim(format!(
                "group_sample plan built for T = {}, input has T = {len}",
                plan.temporal_len
            )));
        }
        let (n, ng) = (plan.n_sample, plan.num_groups());
        let mut out = vec![S::zero(); batch * channels * n * ng];
        for (row, src) in fv.data().chunks(len).enumerate() {
            let dst = &mut out[row * n * ng..(row + 1) * n * ng];
            for (gi, taps) in plan.groups.iter().enumerate() {
                let Some(taps) = taps else { continue };
                for (k, tap) in taps.iter().enumerate() {
                    let w = S::lit(tap.frac);
                    dst[k * ng + gi] = src[tap.lo] * (S::one() - w) + src[tap.hi] * w;
                }
            }
        }
        (
            Tensor::new([batch, channels, n, plan.rows, plan.cols], out)?,
            batch,
            channels,
        )
    };
    let plan = Arc::clone(plan);
    Ok(f.graph().record(
        out,
        &[f],
        Box::new(move |args| {
            let len = plan.temporal_len;
            let (n, ng) = (plan.n_sample, plan.num_groups());
            let mut gf = vec![S::zero(); batch * channels * len];
            for (row, dst) in gf.chunks_mut(len).enumerate() {
                let g = &args.grad[row * n * ng..(row + 1) * n * ng];
                for (gi, taps) in plan.groups.iter().enumerate() {
                    let Some(taps) = taps else { continue };
                    for (k, tap) in taps.iter().enumerate() {
                        let gv = g[k * ng + gi];
                        let w = S::lit(tap.frac);
                        dst[tap.lo] += gv * (S::one() - w);
                        dst[tap.hi] += gv * w;
                    }
                }
            }
            vec![Some(gf)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, GradCheck};
    use crate::tensor::Graph;

    #[test]
    fn group_grid_and_bounds() {
        let plan = SamplingPlan::new(100, 100, 2, 32);
        assert_eq!((plan.rows, plan.cols), (50, 50));
        let (s, e) = SamplingPlan::bounds(100, 2, 0, 0);
        assert_eq!(s, 0.0);
        assert!((e - 0.02).abs() < 1e-15);
        let (_, e) = SamplingPlan::bounds(100, 2, 49, 1);
        assert!((e - 1.02).abs() < 1e-12);
        assert!(!SamplingPlan::group_valid(100, 2, 49, 1));
        assert!(plan.groups[49 * 50 + 1].is_none());
        assert!(SamplingPlan::group_valid(100, 2, 49, 0));
    }

    #[test]
    fn samples_include_both_endpoints() {
        let plan = SamplingPlan::new(10, 10, 2, 5);
        // group (1, 1): s = 0.2, e = 0.6 -> grid positions 1.8 .. 5.4
        let taps = plan.groups[plan.cols + 1].as_ref().unwrap();
        let first = taps[0].lo as f64 + taps[0].frac;
        let last = taps[4].lo as f64 + taps[4].frac;
        assert!((first - 1.8).abs() < 1e-12 && (last - 5.4).abs() < 1e-12);
    }

    #[test]
    fn linear_ramp_is_sampled_exactly() {
        let plan = Arc::new(SamplingPlan::new(8, 8, 2, 4));
        let g = Graph::<f64>::new();
        let f = g.constant(Tensor::from_fn([1, 1, 8], |t| 3.0 * t as f64 + 1.0));
        let out = group_sample(f, &plan).unwrap().to_tensor();
        assert_eq!(out.shape(), &[1, 1, 4, 4, 4]);
        for i in 0..4 {
            for j in 0..4 {
                let valid = SamplingPlan::group_valid(8, 2, i, j);
                let (s, e) = SamplingPlan::bounds(8, 2, i, j);
                for k in 0..4 {
                    let v = out.at(&[0, 0, k, i, j]);
                    if valid {
                        let pos = (s + (e - s) * k as f64 / 3.0) * 7.0;
                        assert!((v - (3.0 * pos + 1.0)).abs() < 1e-12);
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let plan = Arc::new(SamplingPlan::new(8, 6, 2, 3));
        let x = Tensor::from_fn([2, 2, 8], |i| ((i * 37) % 11) as f64 / 5.0 - 1.0);
        let probe: Vec<f64> = (0..2 * 2 * 3 * 3 * 4)
            .map(|i| ((i * 13) % 7) as f64 - 3.0)
            .collect();
        check_gradients(&[x], |_, v| group_sample(v[0], &plan)?.weighted_sum(&probe))
            .unwrap()
            .assert_ok(GradCheck::default());
    }

    #[test]
    fn perturbing_outside_support_leaves_group_unchanged() {
        let plan = Arc::new(SamplingPlan::new(16, 8, 2, 4));
        let (i, j) = (1, 2);
        let support = plan.support(i, j);
        let outside = (0..16).find(|t| !support.contains(t)).unwrap();
        let base = Tensor::from_fn([1, 1, 16], |t| (t as f64).sin());
        let mut bumped = base.clone();
        bumped.data_mut()[outside] += 10.0;
        let g = Graph::<f64>::new();
        let a = group_sample(g.constant(base), &plan).unwrap().to_tensor();
        let b = group_sample(g.constant(bumped), &plan).unwrap().to_tensor();
        for k in 0..4 {
            assert_eq!(a.at(&[0, 0, k, i, j]), b.at(&[0, 0, k, i, j]));
        }
    }
}
