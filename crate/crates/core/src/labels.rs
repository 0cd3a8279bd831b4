//! Ground-truth generation: binary start/end labels from intersection over
//! region (IoR), and the IoU / classification matching maps.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::cell_valid;

/// Slack below which a score is treated as tying its threshold, so that
/// exact ties resolve the same way regardless of rounding.
const TIE_EPS: f64 = 1e-9;

/// Action instances of one clip, in normalized time `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub instances: Vec<(f64, f64)>,
    pub duration_seconds: f64,
}

impl VideoAnnotation {
    pub fn new(instances: Vec<(f64, f64)>, duration_seconds: f64) -> Result<Self> {
        for &(s, e) in &instances {
            if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&e) || e <= s {
                return Err(Error::Format(format!("bad instance ({s}, {e})")));
            }
        }
        if !(duration_seconds > 0.0) {
            return Err(Error::Format(format!("bad duration {duration_seconds}")));
        }
        Ok(Self {
            instances,
            duration_seconds,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    /// Lower bound on the boundary region width, in grid steps.
    pub min_width_steps: f64,
    /// Boundary region width as a fraction of the instance duration.
    pub region_scale: f64,
    /// Positions with IoR above this are positive.
    pub ior_threshold: f64,
    /// Cells with IoU above this are positive for the classification map.
    pub cls_threshold: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            min_width_steps: 3.0,
            region_scale: 0.1,
            ior_threshold: 0.5,
            cls_threshold: 0.9,
        }
    }
}

/// Targets for one clip. Maps are row-major `D×T`, row `i` holding
/// proposals of duration `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub temporal_len: usize,
    pub max_duration: usize,
    pub g_start: Vec<f64>,
    pub g_end: Vec<f64>,
    pub g_iou: Vec<f64>,
    pub g_cls: Vec<f64>,
    pub valid_mask: Vec<bool>,
}

impl GroundTruth {
    pub fn new(ann: &VideoAnnotation, t: usize, d: usize, cfg: &LabelConfig) -> Result<Self> {
        let (g_start, g_end) = boundary_labels(ann, t, cfg)?;
        let (g_iou, g_cls, valid_mask) = matching_labels(ann, t, d, cfg.cls_threshold)?;
        Ok(Self {
            temporal_len: t,
            max_duration: d,
            g_start,
            g_end,
            g_iou,
            g_cls,
            valid_mask,
        })
    }
}

/// Temporal IoU of two intervals. Zero-length intervals score 0.
pub fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    if a.1 <= a.0 || b.1 <= b.0 {
        log::warn!("degenerate interval in iou: {a:?} vs {b:?}");
        return 0.0;
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    inter / union
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

/// Binary start and end labels of length `t`.
///
/// Each boundary owns a region of width `max(min_width_steps / t,
/// region_scale * duration)` centred on it; position `j` owns the anchor
/// `[j/t - 1/2t, j/t + 1/2t]` and is positive when the anchor's IoR with
/// any region exceeds the threshold.
pub fn boundary_labels(
    ann: &VideoAnnotation,
    t: usize,
    cfg: &LabelConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if t < 2 {
        return Err(Error::config(format!(
            "temporal length must be at least 2, got {t}"
        )));
    }
    let delta = 1.0 / t as f64;
    let regions = |pick: fn(&(f64, f64)) -> f64| -> Vec<(f64, f64)> {
        ann.instances
            .iter()
            .map(|inst| {
                let w = (cfg.min_width_steps * delta).max(cfg.region_scale * (inst.1 - inst.0));
                let c = pick(inst);
                (c - w / 2.0, c + w / 2.0)
            })
            .collect()
    };
    let label = |regions: &[(f64, f64)]| -> Vec<f64> {
        (0..t)
            .map(|j| {
                let centre = j as f64 * delta;
                let anchor = (centre - delta / 2.0, centre + delta / 2.0);
                let ior = regions
                    .iter()
                    .map(|&r| overlap(anchor, r) / delta)
                    .fold(0.0, f64::max);
                if ior > cfg.ior_threshold + TIE_EPS {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    };
    Ok((label(&regions(|i| i.0)), label(&regions(|i| i.1))))
}

/// IoU map, its binarized classification map and the validity mask.
pub fn matching_labels(
    ann: &VideoAnnotation,
    t: usize,
    d: usize,
    cls_threshold: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<bool>)> {
    if d > t {
        return Err(Error::config(format!(
            "max duration {d} exceeds temporal length {t}"
        )));
    }
    let mut g_iou = vec![0.0; d * t];
    let mut g_cls = vec![0.0; d * t];
    let mut mask = vec![false; d * t];
    for i in 0..d {
        for j in 0..t {
            if !cell_valid(t, i, j) {
                continue;
            }
            let k = i * t + j;
            mask[k] = true;
            let cell = (j as f64 / t as f64, (j + i + 1) as f64 / t as f64);
            let best = ann
                .instances
                .iter()
                .map(|&inst| iou(cell, inst))
                .fold(0.0, f64::max);
            g_iou[k] = best;
            g_cls[k] = if best > cls_threshold + TIE_EPS {
                1.0
            } else {
                0.0
            };
        }
    }
    Ok((g_iou, g_cls, mask))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSegment {
    pub segment: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawVideo {
    pub duration: f64,
    pub annotations: Vec<RawSegment>,
}

/// Video id to annotations in seconds, as stored on disk.
pub type AnnotationFile = BTreeMap<String, RawVideo>;

impl RawVideo {
    /// Normalizes segments by the video duration, clamping them into
    /// `[0, 1]` and dropping any that collapse.
    pub fn normalized(&self) -> Result<VideoAnnotation> {
        if !(self.duration > 0.0) {
            return Err(Error::Format(format!("bad duration {}", self.duration)));
        }
        let instances = self
            .annotations
            .iter()
            .map(|a| {
                (
                    (a.segment[0] / self.duration).clamp(0.0, 1.0),
                    (a.segment[1] / self.duration).clamp(0.0, 1.0),
                )
            })
            .filter(|(s, e)| e > s)
            .collect();
        VideoAnnotation::new(instances, self.duration)
    }
}

pub fn load_annotations(path: &Path) -> Result<AnnotationFile> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_annotations(path: &Path, file: &AnnotationFile) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(file)?)?;
    Ok(())
}
