//! Proposal generation: score fusion over the matching map, half-max
//! boundary filtering and Soft-NMS.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::iou;
use crate::model::{cell_interval, ForwardOutput};

/// A scored interval in normalized time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub start: f64,
    pub end: f64,
    pub score: f64,
}

impl Proposal {
    pub fn interval(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}

/// Score descending, then earlier start, then shorter duration.
pub fn rank_order(a: &Proposal, b: &Proposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.total_cmp(&b.start))
        .then((a.end - a.start).total_cmp(&(b.end - b.start)))
}

/// A fused matching-map cell, kept on the grid until normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnmsMode {
    Gaussian,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Exponent on the matching confidence.
    pub gamma: f64,
    pub snms_threshold: f64,
    pub snms_sigma: f64,
    pub snms_mode: SnmsMode,
    pub n_final: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            snms_threshold: 0.5,
            snms_sigma: 0.4,
            snms_mode: SnmsMode::Gaussian,
            n_final: 100,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.snms_threshold > 0.0 && self.snms_threshold < 1.0) {
            return Err(Error::config(format!(
                "Soft-NMS threshold must lie in (0, 1), got {}",
                self.snms_threshold
            )));
        }
        if !(self.snms_sigma > 0.0) || self.n_final == 0 {
            return Err(Error::config("Soft-NMS sigma and n_final must be positive"));
        }
        Ok(())
    }
}

/// `p_start * p_end * (m_cls * m_reg)^gamma`.
pub fn fused_score(p_start: f64, p_end: f64, m_cls: f64, m_reg: f64, gamma: f64) -> f64 {
    p_start * p_end * (m_cls * m_reg).powf(gamma)
}

/// The end index `T` reads position `T - 1`: the grid carries `T` samples.
fn end_index(t: usize, te: usize) -> usize {
    te.min(t - 1)
}

/// One candidate per valid cell of sample `b`.
pub fn fuse_scores(out: &ForwardOutput<f64>, b: usize, gamma: f64) -> Result<Vec<Candidate>> {
    let shape = out.m_cls.shape();
    if shape.len() != 3 || b >= shape[0] {
        return Err(Error::dim(format!(
            "sample {b} out of maps shaped {shape:?}"
        )));
    }
    let (d, t) = (shape[1], shape[2]);
    let ps = &out.p_start.data()[b * t..(b + 1) * t];
    let pe = &out.p_end.data()[b * t..(b + 1) * t];
    let cls = &out.m_cls.data()[b * d * t..(b + 1) * d * t];
    let reg = &out.m_reg.data()[b * d * t..(b + 1) * d * t];
    let mut cands = Vec::new();
    for i in 0..d {
        for j in 0..t {
            let k = i * t + j;
            if !out.valid_mask[k] {
                continue;
            }
            let (ts, te) = cell_interval(i, j);
            let score = fused_score(ps[ts], pe[end_index(t, te)], cls[k], reg[k], gamma);
            cands.push(Candidate {
                start: ts,
                end: te,
                score,
            });
        }
    }
    Ok(cands)
}

/// Drops candidates whose start or end probability falls below half the
/// respective maximum.
pub fn filter_boundaries(cands: Vec<Candidate>, p_start: &[f64], p_end: &[f64]) -> Vec<Candidate> {
    let t = p_start.len();
    let max_s = p_start.iter().copied().fold(f64::MIN, f64::max);
    let max_e = p_end.iter().copied().fold(f64::MIN, f64::max);
    cands
        .into_iter()
        .filter(|c| p_start[c.start] >= 0.5 * max_s && p_end[end_index(t, c.end)] >= 0.5 * max_e)
        .collect()
}

pub fn normalize(cands: &[Candidate], t: usize) -> Vec<Proposal> {
    cands
        .iter()
        .map(|c| Proposal {
            start: c.start as f64 / t as f64,
            end: c.end as f64 / t as f64,
            score: c.score,
        })
        .collect()
}

/// Soft-NMS: repeatedly keeps the best remaining proposal and decays every
/// remaining proposal that overlaps it by more than the threshold.
pub fn soft_nms(mut pool: Vec<Proposal>, cfg: &FusionConfig) -> Vec<Proposal> {
    let mut kept = Vec::with_capacity(cfg.n_final.min(pool.len()));
    while !pool.is_empty() && kept.len() < cfg.n_final {
        let best = (0..pool.len())
            .min_by(|&a, &b| rank_order(&pool[a], &pool[b]))
            .expect("nonempty pool");
        let top = pool.swap_remove(best);
        for p in pool.iter_mut() {
            let o = iou(top.interval(), p.interval());
            if o > cfg.snms_threshold {
                p.score *= match cfg.snms_mode {
                    SnmsMode::Gaussian => (-o * o / cfg.snms_sigma).exp(),
                    SnmsMode::Linear => 1.0 - o,
                };
            }
        }
        kept.push(top);
    }
    kept.sort_by(rank_order);
    kept
}

/// Fusion, filtering, normalization and Soft-NMS for sample `b`.
pub fn generate_proposals(
    out: &ForwardOutput<f64>,
    b: usize,
    cfg: &FusionConfig,
) -> Result<Vec<Proposal>> {
    let t = out.p_start.shape()[1];
    let cands = fuse_scores(out, b, cfg.gamma)?;
    let ps = &out.p_start.data()[b * t..(b + 1) * t];
    let pe = &out.p_end.data()[b * t..(b + 1) * t];
    let kept = filter_boundaries(cands, ps, pe);
    Ok(soft_nms(normalize(&kept, t), cfg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSegment {
    pub segment: [f64; 2],
    pub score: f64,
}

/// Video id to proposals in seconds.
pub type ProposalFile = BTreeMap<String, Vec<ScoredSegment>>;

pub fn to_seconds(props: &[Proposal], duration: f64) -> Vec<ScoredSegment> {
    props
        .iter()
        .map(|p| ScoredSegment {
            segment: [p.start * duration, p.end * duration],
            score: p.score,
        })
        .collect()
}

pub fn from_seconds(segs: &[ScoredSegment], duration: f64) -> Vec<Proposal> {
    segs.iter()
        .map(|s| Proposal {
            start: s.segment[0] / duration,
            end: s.segment[1] / duration,
            score: s.score,
        })
        .collect()
}

pub fn save_proposals(path: &Path, file: &ProposalFile) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(file)?)?;
    Ok(())
}

pub fn load_proposals(path: &Path) -> Result<ProposalFile> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
