//! Multitask objective: weighted cross-entropy on boundaries and the
//! classification map, balanced MSE on the regression map, and an L2
//! penalty on the parameters.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::GroundTruth;
use crate::model::ForwardVars;
use crate::nn::Bound;
use crate::scalar::Scalar;
use crate::tensor::{sum_all, Tensor, Var};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the regression term.
    pub lambda: f64,
    /// Weight of the L2 penalty.
    pub beta: f64,
    /// Sampled negatives per positive in the regression term.
    pub neg_pos_ratio: f64,
    /// Cells with IoU at or below this count as regression negatives.
    pub reg_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            beta: 1e-4,
            neg_pos_ratio: 1.0,
            reg_eps: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.beta >= 0.0) || !(self.neg_pos_ratio >= 0.0) {
            return Err(Error::config(format!("invalid loss config {self:?}")));
        }
        Ok(())
    }
}

/// Per-entry weights `(w_pos, w_neg)` such that the weighted cross-entropy
/// is `-(sum w_pos * ln p + w_neg * ln(1 - p))`.
///
/// With `N` masked entries of which `N+` are positive and `ratio = N / N+`,
/// positives carry `0.5 * ratio / N` and negatives `0.5 * ratio / (ratio - 1) / N`.
pub fn wce_weights(g: &[f64], mask: Option<&[bool]>) -> Result<(Vec<f64>, Vec<f64>)> {
    let on = |k: usize| mask.is_none_or(|m| m[k]);
    let n = (0..g.len()).filter(|&k| on(k)).count();
    let n_pos = (0..g.len()).filter(|&k| on(k) && g[k] > 0.5).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::SkipTerm(format!(
            "{n_pos} positives among {n} entries"
        )));
    }
    let ratio = n as f64 / n_pos as f64;
    let a = 0.5 * ratio / n as f64;
    let b = 0.5 * ratio / (ratio - 1.0) / n as f64;
    let mut w_pos = vec![0.0; g.len()];
    let mut w_neg = vec![0.0; g.len()];
    for k in (0..g.len()).filter(|&k| on(k)) {
        if g[k] > 0.5 {
            w_pos[k] = a;
        } else {
            w_neg[k] = b;
        }
    }
    Ok((w_pos, w_neg))
}

fn lits<S: Scalar>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::lit(x)).collect()
}

/// Weighted binary cross-entropy of probabilities `p` against binary labels.
pub fn wce<'g, S: Scalar>(p: Var<'g, S>, g: &[f64], mask: Option<&[bool]>) -> Result<Var<'g, S>> {
    if p.value().numel() != g.len() || mask.is_some_and(|m| m.len() != g.len()) {
        return Err(Error::dim(format!(
            "wce: {} predictions, {} labels",
            p.value().numel(),
            g.len()
        )));
    }
    let (w_pos, w_neg) = wce_weights(g, mask)?;
    let pc = p.clamp(S::lit(PROB_EPS), S::lit(1.0 - PROB_EPS));
    let log_p = pc.ln()?.weighted_sum(&lits(&w_pos))?;
    let log_q = pc.neg().add(S::one())?.ln()?.weighted_sum(&lits(&w_neg))?;
    Ok(log_p.add(log_q)?.neg())
}

/// Weights `1 / count` on the cells entering the regression term: every
/// masked cell with IoU above `eps`, plus `neg_pos_ratio` times as many
/// cells at or below it, drawn without replacement.
pub fn reg_weights<R: Rng>(
    g_iou: &[f64],
    mask: &[bool],
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if mask.len() != g_iou.len() {
        return Err(Error::dim("reg_loss: mask and map sizes differ"));
    }
    let pos: Vec<usize> = (0..g_iou.len())
        .filter(|&k| mask[k] && g_iou[k] > cfg.reg_eps)
        .collect();
    if pos.is_empty() {
        return Err(Error::SkipTerm("no positive regression cells".into()));
    }
    let neg: Vec<usize> = (0..g_iou.len())
        .filter(|&k| mask[k] && g_iou[k] <= cfg.reg_eps)
        .collect();
    let want = ((pos.len() as f64 * cfg.neg_pos_ratio).round() as usize).min(neg.len());
    let mut chosen = pos;
    chosen.extend(
        index::sample(rng, neg.len(), want)
            .into_iter()
            .map(|i| neg[i]),
    );
    let w = 1.0 / chosen.len() as f64;
    let mut weights = vec![0.0; g_iou.len()];
    for k in chosen {
        weights[k] = w;
    }
    Ok(weights)
}

/// Mean squared error between `m_reg` and `g_iou` over the cells selected
/// by `weights` (see [`reg_weights`]).
pub fn reg_loss<'g, S: Scalar>(
    m_reg: Var<'g, S>,
    g_iou: &[f64],
    weights: &[f64],
) -> Result<Var<'g, S>> {
    let shape = m_reg.shape();
    let target = Tensor::new(shape, lits(g_iou))?;
    let diff = m_reg.sub(m_reg.graph().constant(target))?;
    diff.mul(diff)?.weighted_sum(&lits(weights))
}

/// Values of the individual terms, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_b")]
    pub boundary: f64,
    #[serde(rename = "L_cls")]
    pub cls: f64,
    #[serde(rename = "L_reg")]
    pub reg: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    pub total: f64,
}

fn value_of<S: Scalar>(v: Var<'_, S>) -> Result<f64> {
    Ok(v.value().item()?.to_f64c())
}

fn skip_undefined<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::SkipTerm(msg)) => {
            log::debug!("skipping loss term: {msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Full objective for a batch:
/// `mean_b(wce_start + wce_end + wce_cls + lambda * reg) + beta * sum theta^2`.
///
/// Terms that are undefined for a clip (no positives or no negatives)
/// contribute nothing for that clip.
pub fn total_loss<'g, S: Scalar, R: Rng>(
    out: &ForwardVars<'g, S>,
    gts: &[GroundTruth],
    params: &Bound<'g, S>,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<(Var<'g, S>, LossBreakdown)> {
    let batch = out.p_start.shape()[0];
    if gts.len() != batch {
        return Err(Error::dim(format!(
            "{} targets for batch of {batch}",
            gts.len()
        )));
    }
    let scale = S::lit(1.0 / batch as f64);
    let mut data_terms = Vec::new();
    let mut acc = LossBreakdown::default();
    for (b, gt) in gts.iter().enumerate() {
        let clip = |v: Var<'g, S>| v.narrow(0, b, 1);
        let mut boundary = Vec::new();
        for (p, g) in [(out.p_start, &gt.g_start), (out.p_end, &gt.g_end)] {
            if let Some(l) = skip_undefined(wce(clip(p)?, g, None))? {
                boundary.push(l);
            }
        }
        if !boundary.is_empty() {
            let l = sum_all(&boundary)?;
            acc.boundary += value_of(l)?;
            data_terms.push(l);
        }
        if let Some(l) = skip_undefined(wce(clip(out.m_cls)?, &gt.g_cls, Some(&gt.valid_mask)))? {
            acc.cls += value_of(l)?;
            data_terms.push(l);
        }
        if let Some(w) = skip_undefined(reg_weights(&gt.g_iou, &gt.valid_mask, cfg, rng))? {
            let l = reg_loss(clip(out.m_reg)?, &gt.g_iou, &w)?;
            acc.reg += value_of(l)?;
            data_terms.push(l.mul(S::lit(cfg.lambda))?);
        }
    }
    let l2 = params.l2()?;
    acc.l2 = value_of(l2)?;
    let mut parts = vec![l2.mul(S::lit(cfg.beta))?];
    if !data_terms.is_empty() {
        parts.push(sum_all(&data_terms)?.mul(scale)?);
    }
    let total = sum_all(&parts)?;
    let inv = 1.0 / batch as f64;
    acc.boundary *= inv;
    acc.cls *= inv;
    acc.reg *= inv;
    acc.total = value_of(total)?;
    if !acc.total.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite: {acc:?}")));
    }
    Ok((total, acc))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::labels::{LabelConfig, VideoAnnotation};
    use crate::model::{Dcan, ModelConfig};
    use crate::tensor::gradcheck::{check_gradients_at, GradCheck};
    use crate::tensor::Graph;

    /// Direct evaluation of the weighted cross-entropy formula.
    fn wce_oracle(p: &[f64], g: &[f64], mask: Option<&[bool]>) -> f64 {
        let idx: Vec<usize> = (0..p.len())
            .filter(|&k| mask.is_none_or(|m| m[k]))
            .collect();
        let n = idx.len() as f64;
        let n_pos = idx.iter().filter(|&&k| g[k] == 1.0).count() as f64;
        let ratio = n / n_pos;
        let (a, b) = (0.5 * ratio, 0.5 * ratio / (ratio - 1.0));
        let mut s = 0.0;
        for &k in &idx {
            let pk = p[k].clamp(PROB_EPS, 1.0 - PROB_EPS);
            s += a * g[k] * pk.ln() + b * (1.0 - g[k]) * (1.0 - pk).ln();
        }
        -s / n
    }

    fn eval_wce(p: &[f64], g: &[f64], mask: Option<&[bool]>) -> Result<f64> {
        let graph = Graph::new();
        let v = graph.constant(Tensor::vector(p.to_vec()));
        let out = wce(v, g, mask)?.value().item();
        out
    }

    #[test]
    fn balanced_half_is_ln2() {
        let g = [1.0, 0.0, 1.0, 0.0];
        let l = eval_wce(&[0.5; 4], &g, None).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_cost_nothing() {
        let g = [1.0, 0.0, 0.0, 1.0, 0.0];
        assert!(eval_wce(&g, &g, None).unwrap() < 1e-5);
    }

    #[test]
    fn doubling_negatives_matches_oracle() {
        let p = [0.7, 0.2, 0.4];
        let g = [1.0, 0.0, 0.0];
        let p2 = [0.7, 0.2, 0.4, 0.6, 0.9];
        let g2 = [1.0, 0.0, 0.0, 0.0, 0.0];
        let a = eval_wce(&p, &g, None).unwrap();
        let b = eval_wce(&p2, &g2, None).unwrap();
        assert!((a - wce_oracle(&p, &g, None)).abs() < 1e-12);
        assert!((b - wce_oracle(&p2, &g2, None)).abs() < 1e-12);
        assert!((a - b).abs() > 1e-3);
        // The weights reduce to half the mean positive term plus half the
        // mean negative term, so repeating identical negatives is neutral.
        let p3 = [0.7, 0.2, 0.4, 0.2, 0.4];
        assert!((eval_wce(&p3, &g2, None).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn wce_needs_both_classes() {
        assert!(matches!(
            eval_wce(&[0.5, 0.5], &[1.0, 1.0], None),
            Err(Error::SkipTerm(_))
        ));
        assert!(matches!(
            eval_wce(&[0.5, 0.5], &[0.0, 0.0], None),
            Err(Error::SkipTerm(_))
        ));
        let mask = [true, false];
        assert!(matches!(
            eval_wce(&[0.5, 0.5], &[1.0, 0.0], Some(&mask)),
            Err(Error::SkipTerm(_))
        ));
    }

    #[test]
    fn reg_loss_examples() {
        let graph = Graph::new();
        let m = graph.constant(Tensor::vector(vec![0.5]));
        assert_eq!(
            reg_loss(m, &[1.0], &[1.0]).unwrap().value().item().unwrap(),
            0.25
        );
        let g = [0.0, 0.3, 0.8, 0.0];
        let m = graph.constant(Tensor::vector(g.to_vec()));
        let w = reg_weights(
            &g,
            &[true; 4],
            &LossConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(reg_loss(m, &g, &w).unwrap().value().item().unwrap(), 0.0);
    }

    #[test]
    fn reg_sampling_is_balanced_and_seeded() {
        let mut g = vec![0.0; 100];
        g[3] = 0.4;
        g[40] = 0.9;
        let mask = vec![true; 100];
        let cfg = LossConfig::default();
        let w = reg_weights(&g, &mask, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let picked: Vec<usize> = (0..100).filter(|&k| w[k] > 0.0).collect();
        assert_eq!(picked.len(), 4);
        assert!(picked.contains(&3) && picked.contains(&40));
        assert!(w.iter().all(|&x| x == 0.0 || x == 0.25));
        let again = reg_weights(&g, &mask, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(w, again);
        assert!(matches!(
            reg_weights(
                &[0.0; 3],
                &[true; 3],
                &cfg,
                &mut ChaCha8Rng::seed_from_u64(1)
            ),
            Err(Error::SkipTerm(_))
        ));
    }

    #[test]
    fn reg_loss_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g: Vec<f64> = (0..60)
            .map(|k| {
                if k % 4 == 0 {
                    rng.gen_range(0.1..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let m: Vec<f64> = (0..60).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mask: Vec<bool> = (0..60).map(|k| k % 7 != 0).collect();
        let cfg = LossConfig::default();
        let w = reg_weights(&g, &mask, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let graph = Graph::new();
        let l = reg_loss(graph.constant(Tensor::vector(m.clone())), &g, &w)
            .unwrap()
            .value()
            .item()
            .unwrap();
        let chosen: Vec<usize> = (0..60).filter(|&k| w[k] > 0.0).collect();
        let oracle =
            chosen.iter().map(|&k| (m[k] - g[k]).powi(2)).sum::<f64>() / chosen.len() as f64;
        assert!((l - oracle).abs() < 1e-14);
        assert!(chosen.iter().all(|&k| mask[k]));
    }

    #[test]
    fn beta_term_alone() {
        let graph = Graph::new();
        let p = Bound::from_vars(vec![graph.param(Tensor::vector(vec![1.0, 2.0]))]);
        let l2: f64 = p.l2().unwrap().mul(1e-4).unwrap().value().item().unwrap();
        assert!((l2 - 5e-4).abs() < 1e-18);
    }

    fn tiny() -> (Dcan<f64>, GroundTruth, Tensor<f64>, Tensor<f64>) {
        let cfg = ModelConfig {
            temporal_len: 16,
            max_duration: 8,
            rgb_dim: 3,
            flow_dim: 2,
            base_channels: 4,
            n_base: 2,
            n_blocks: 2,
            group_size: 2,
            n_sample: 4,
            sample_channels: 3,
            c_group: 6,
            c_hidden: 4,
            ..ModelConfig::default()
        };
        let model = Dcan::new(cfg, 4).unwrap();
        let ann = VideoAnnotation::new(vec![(0.25, 0.5), (0.625, 0.875)], 16.0).unwrap();
        let gt = GroundTruth::new(&ann, 16, 8, &LabelConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rgb = Tensor::from_fn(vec![1, 3, 16], |_| rng.gen_range(-1.0..1.0));
        let flow = Tensor::from_fn(vec![1, 2, 16], |_| rng.gen_range(-1.0..1.0));
        (model, gt, rgb, flow)
    }

    #[test]
    fn total_is_sum_of_terms() {
        let (model, gt, rgb, flow) = tiny();
        let graph = Graph::new();
        let p = model.params().bind(&graph);
        let out = model
            .forward(&p, graph.constant(rgb), graph.constant(flow))
            .unwrap();
        let cfg = LossConfig::default();
        let (total, parts) =
            total_loss(&out, &[gt], &p, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let expected = parts.boundary + parts.cls + cfg.lambda * parts.reg + cfg.beta * parts.l2;
        assert!((total.value().item().unwrap() - expected).abs() < 1e-12);
        assert!(parts.boundary > 0.0 && parts.cls > 0.0 && parts.reg > 0.0);
        assert!((parts.l2 - model.params().l2()).abs() < 1e-9);
    }

    #[test]
    fn lambda_scales_regression_linearly() {
        let (model, gt, rgb, flow) = tiny();
        let run = |lambda: f64| {
            let graph = Graph::new();
            let p = model.params().bind(&graph);
            let out = model
                .forward(
                    &p,
                    graph.constant(rgb.clone()),
                    graph.constant(flow.clone()),
                )
                .unwrap();
            let cfg = LossConfig {
                lambda,
                ..LossConfig::default()
            };
            let (t, parts) = total_loss(
                &out,
                std::slice::from_ref(&gt),
                &p,
                &cfg,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .unwrap();
            let out = (t.value().item().unwrap(), parts.reg);
            out
        };
        let (a, reg) = run(10.0);
        let (b, _) = run(20.0);
        assert!((b - a - 10.0 * reg).abs() < 1e-12);
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let (model, gt, rgb, flow) = tiny();
        let np = model.params().len();
        let mut inputs = model.params().tensors().to_vec();
        inputs.push(rgb);
        inputs.push(flow);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let coords: Vec<(usize, usize)> = (0..np)
            .map(|i| (i, rng.gen_range(0..inputs[i].numel())))
            .collect();
        let cfg = LossConfig::default();
        let report = check_gradients_at(&inputs, &coords, 1e-5, |_, v| {
            let p = Bound::from_vars(v[..np].to_vec());
            let out = model.forward(&p, v[np], v[np + 1])?;
            Ok(total_loss(
                &out,
                std::slice::from_ref(&gt),
                &p,
                &cfg,
                &mut ChaCha8Rng::seed_from_u64(3),
            )?
            .0)
        })
        .unwrap();
        report.assert_ok(GradCheck::default());
    }

    proptest! {
        #[test]
        fn wce_permutation_invariant(
            entries in prop::collection::vec((0.01f64..0.99, any::<bool>()), 2..40),
            seed in any::<u64>(),
        ) {
            let g: Vec<f64> = entries.iter().map(|e| if e.1 { 1.0 } else { 0.0 }).collect();
            prop_assume!(g.contains(&1.0) && g.contains(&0.0));
            let p: Vec<f64> = entries.iter().map(|e| e.0).collect();
            let mut order: Vec<usize> = (0..p.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let pp: Vec<f64> = order.iter().map(|&k| p[k]).collect();
            let gp: Vec<f64> = order.iter().map(|&k| g[k]).collect();
            let a = eval_wce(&p, &g, None).unwrap();
            let b = eval_wce(&pp, &gp, None).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((a - wce_oracle(&p, &g, None)).abs() < 1e-12);
            prop_assert!(a >= 0.0);
        }
    }
}
