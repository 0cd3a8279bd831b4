//! Proposal and detection metrics: recall at a proposal budget (AR@AN),
//! area under the AR-AN curve, and class-agnostic average precision.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{rank_order, Proposal};
use crate::labels::iou;

/// `lo, lo + step, ..., hi`, computed from integer multiples of `step`.
pub fn tiou_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|k| ((lo + k as f64 * step) * 1e6).round() / 1e6)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub tiou_proposals: Vec<f64>,
    pub tiou_map: Vec<f64>,
    pub max_an: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self::activitynet()
    }
}

impl MetricConfig {
    /// `[0.5:0.05:0.95]` for recall and `{0.5, 0.75, 0.95}` for mAP.
    pub fn activitynet() -> Self {
        Self {
            tiou_proposals: tiou_grid(0.5, 0.95, 0.05),
            tiou_map: vec![0.5, 0.75, 0.95],
            max_an: 100,
        }
    }

    /// `[0.5:0.05:1.0]` for recall and `{0.3, ..., 0.7}` for mAP.
    pub fn thumos() -> Self {
        Self {
            tiou_proposals: tiou_grid(0.5, 1.0, 0.05),
            tiou_map: tiou_grid(0.3, 0.7, 0.1),
            max_an: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for grid in [&self.tiou_proposals, &self.tiou_map] {
            let ok = !grid.is_empty()
                && grid.iter().all(|&v| v > 0.0 && v <= 1.0)
                && grid.windows(2).all(|w| w[0] < w[1]);
            if !ok {
                return Err(Error::config(format!(
                    "tIoU grid must be strictly increasing in (0, 1]: {grid:?}"
                )));
            }
        }
        if self.max_an == 0 {
            return Err(Error::config("max_an must be at least 1"));
        }
        Ok(())
    }
}

/// Ground truth and ranked proposals of one video, in normalized time.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoResult {
    pub gts: Vec<(f64, f64)>,
    pub proposals: Vec<Proposal>,
}

impl VideoResult {
    /// Sorts proposals into rank order.
    pub fn new(gts: Vec<(f64, f64)>, mut proposals: Vec<Proposal>) -> Self {
        proposals.sort_by(rank_order);
        Self { gts, proposals }
    }
}

/// Greedy one-to-one matching in rank order: each proposal takes the
/// unmatched ground truth with the highest tIoU at or above `tiou`.
/// Returns, per proposal, whether it matched.
pub fn greedy_match(gts: &[(f64, f64)], proposals: &[Proposal], tiou: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    proposals
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let o = iou(p.interval(), gt);
                if o >= tiou && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            best.is_some()
        })
        .collect()
}

fn total_gts(videos: &[VideoResult]) -> Result<usize> {
    let n: usize = videos.iter().map(|v| v.gts.len()).sum();
    if n == 0 {
        return Err(Error::Contract("no ground-truth instances".into()));
    }
    Ok(n)
}

/// Recall at every budget `1..=max_an`: entry `an - 1` is the fraction of
/// all ground-truth instances matched by the top-`an` proposals of their
/// video.
pub fn recall_curve(videos: &[VideoResult], tiou: f64, max_an: usize) -> Result<Vec<f64>> {
    let n = total_gts(videos)? as f64;
    let mut hits = vec![0usize; max_an];
    for v in videos {
        let top = &v.proposals[..v.proposals.len().min(max_an)];
        for (k, matched) in greedy_match(&v.gts, top, tiou).into_iter().enumerate() {
            if matched {
                hits[k] += 1;
            }
        }
    }
    let mut acc = 0usize;
    Ok(hits
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / n
        })
        .collect())
}

pub fn recall_at(videos: &[VideoResult], tiou: f64, an: usize) -> Result<f64> {
    if an == 0 {
        return Err(Error::config("proposal budget must be at least 1"));
    }
    Ok(recall_curve(videos, tiou, an)?[an - 1])
}

/// Average recall over the tIoU grid at every budget `1..=max_an`.
pub fn ar_curve(videos: &[VideoResult], grid: &[f64], max_an: usize) -> Result<Vec<f64>> {
    let mut ar = vec![0.0; max_an];
    for &t in grid {
        for (a, r) in ar.iter_mut().zip(recall_curve(videos, t, max_an)?) {
            *a += r;
        }
    }
    Ok(ar.into_iter().map(|a| a / grid.len() as f64).collect())
}

/// Trapezoidal area under an AR curve sampled at `AN = 1..=len`, normalized
/// by the budget span and reported in percent.
pub fn auc(ar: &[f64]) -> Result<f64> {
    if ar.len() < 2 {
        return Err(Error::config("AUC needs at least two budgets"));
    }
    let area: f64 = ar.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
    Ok(area / (ar.len() - 1) as f64 * 100.0)
}

/// All-point interpolated average precision of the pooled, score-ranked
/// predictions of every video.
pub fn average_precision(videos: &[VideoResult], tiou: f64) -> Result<f64> {
    let n = total_gts(videos)? as f64;
    let mut ranked: Vec<(Proposal, bool)> = Vec::new();
    for v in videos {
        let matched = greedy_match(&v.gts, &v.proposals, tiou);
        ranked.extend(v.proposals.iter().copied().zip(matched));
    }
    // Stable: equal scores keep video order, then rank order within a video.
    ranked.sort_by(|a, b| b.0.score.total_cmp(&a.0.score));
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(ranked.len());
    for (k, (_, hit)) in ranked.iter().enumerate() {
        if *hit {
            tp += 1;
        }
        points.push((tp as f64 / n, tp as f64 / (k + 1) as f64));
    }
    // Precision envelope from the right.
    let mut env = 0.0f64;
    for p in points.iter_mut().rev() {
        env = env.max(p.1);
        p.1 = env;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in points {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    Ok(ap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Average recall (fraction) at selected budgets, keyed by AN.
    pub ar_at: BTreeMap<usize, f64>,
    /// Area under the AR-AN curve, percent.
    pub auc: f64,
    pub integration: String,
    /// AP per mAP threshold, keyed by the threshold printed to two places.
    pub ap: BTreeMap<String, f64>,
    pub map_average: f64,
    pub num_videos: usize,
    pub num_gts: usize,
}

pub const REPORTED_AN: [usize; 5] = [1, 5, 10, 50, 100];

pub fn evaluate(videos: &[VideoResult], cfg: &MetricConfig) -> Result<Metrics> {
    cfg.validate()?;
    let num_gts = total_gts(videos)?;
    let ar = ar_curve(videos, &cfg.tiou_proposals, cfg.max_an)?;
    let ar_at = REPORTED_AN
        .iter()
        .filter(|&&an| an <= cfg.max_an)
        .map(|&an| (an, ar[an - 1]))
        .collect();
    let mut ap = BTreeMap::new();
    let mut sum = 0.0;
    for &t in &cfg.tiou_map {
        let v = average_precision(videos, t)?;
        sum += v;
        ap.insert(format!("{t:.2}"), v);
    }
    Ok(Metrics {
        ar_at,
        auc: auc(&ar)?,
        integration: "trapezoidal".into(),
        ap,
        map_average: sum / cfg.tiou_map.len() as f64,
        num_videos: videos.len(),
        num_gts,
    })
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>8}", "metric", "value")?;
        for (an, v) in &self.ar_at {
            writeln!(f, "{:<12} {:>8.2}", format!("AR@{an}"), v * 100.0)?;
        }
        writeln!(f, "{:<12} {:>8.2}", "AUC", self.auc)?;
        for (t, v) in &self.ap {
            writeln!(f, "{:<12} {:>8.2}", format!("mAP@{t}"), v * 100.0)?;
        }
        writeln!(f, "{:<12} {:>8.2}", "mAP avg", self.map_average * 100.0)
    }
}
