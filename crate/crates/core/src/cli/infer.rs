use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::config::RunConfig;
use super::select_subset;
use crate::data::{
    load_features, manifest_path, rescale, window, FeatureSequence, Manifest, WindowMode,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricConfig, Metrics, VideoResult};
use crate::inference::{
    filter_boundaries, from_seconds, fuse_scores, generate_proposals, soft_nms, to_seconds,
    Proposal, ProposalFile,
};
use crate::labels::{AnnotationFile, RawVideo};
use crate::model::Dcan;
use crate::tensor::Tensor;

/// Maps a window-normalized position to the whole sequence.
pub fn window_to_video(offset: usize, size: usize, t_raw: usize, x: f64) -> f64 {
    ((offset as f64 + x * size as f64) / t_raw as f64).min(1.0)
}

fn batch_of(streams: &[&Tensor<f64>]) -> Result<Tensor<f64>> {
    let (c, t) = (streams[0].shape()[0], streams[0].shape()[1]);
    let data = streams
        .iter()
        .flat_map(|x| x.data().iter().copied())
        .collect();
    Tensor::new([streams.len(), c, t], data)
}

/// Proposals for one sequence in normalized video time, best first.
pub fn infer_sequence(
    model: &Dcan<f64>,
    seq: &FeatureSequence,
    cfg: &RunConfig,
) -> Result<Vec<Proposal>> {
    let t = cfg.model.temporal_len;
    if !cfg.dataset.windowed() {
        let seq = if seq.len() == t {
            seq.clone()
        } else {
            rescale(seq, t)?
        };
        let out = model.predict(&batch_of(&[&seq.rgb])?, &batch_of(&[&seq.flow])?)?;
        return generate_proposals(&out, 0, &cfg.fusion);
    }
    let t_raw = seq.len();
    let clips = window(seq, &[], t, cfg.stride(), WindowMode::Infer)?;
    let rgb: Vec<&Tensor<f64>> = clips.iter().map(|c| &c.rgb).collect();
    let flow: Vec<&Tensor<f64>> = clips.iter().map(|c| &c.flow).collect();
    let out = model.predict(&batch_of(&rgb)?, &batch_of(&flow)?)?;
    let mut pool = Vec::new();
    for (b, clip) in clips.iter().enumerate() {
        let cands = fuse_scores(&out, b, cfg.fusion.gamma)?;
        let ps = &out.p_start.data()[b * t..(b + 1) * t];
        let pe = &out.p_end.data()[b * t..(b + 1) * t];
        for c in filter_boundaries(cands, ps, pe) {
            let start = window_to_video(clip.offset, t, t_raw, c.start as f64 / t as f64);
            let end = window_to_video(clip.offset, t, t_raw, c.end as f64 / t as f64);
            if end > start {
                pool.push(Proposal {
                    start,
                    end,
                    score: c.score,
                });
            }
        }
    }
    Ok(soft_nms(pool, &cfg.fusion))
}

/// Runs inference on the evaluation subset of a corpus; segments are in
/// seconds.
pub fn infer_corpus(
    model: &Dcan<f64>,
    cfg: &RunConfig,
    manifest: &Manifest,
    root: &Path,
) -> Result<ProposalFile> {
    let entries = select_subset(manifest, &cfg.eval_subset);
    let results: Vec<(String, Vec<_>)> = entries
        .par_iter()
        .map(|&(id, entry)| {
            let seq = load_features(root, id, entry)?;
            let props = infer_sequence(model, &seq, cfg)?;
            Ok((id.clone(), to_seconds(&props, entry.duration)))
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().collect())
}

/// Reads ground truth from an annotation file, or from a corpus manifest
/// (directory or file) restricted to `subset`.
pub fn load_ground_truth(path: &Path, subset: Option<&str>) -> Result<AnnotationFile> {
    let file = manifest_path(path);
    let text = fs::read_to_string(&file)?;
    if let Ok(manifest) = serde_json::from_str::<Manifest>(&text) {
        let entries = match subset {
            Some(s) => select_subset(&manifest, s),
            None => manifest.iter().collect(),
        };
        return Ok(entries
            .into_iter()
            .map(|(id, e)| {
                (
                    id.clone(),
                    RawVideo {
                        duration: e.duration,
                        annotations: e.annotations.clone(),
                    },
                )
            })
            .collect());
    }
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", file.display())))
}

/// Pairs proposals with ground truth on the videos present in both, in
/// id order; returns the pairs and the ids that were excluded.
pub fn video_results(
    proposals: &ProposalFile,
    ground_truth: &AnnotationFile,
) -> Result<(Vec<VideoResult>, Vec<String>)> {
    let ids: BTreeSet<&String> = proposals.keys().chain(ground_truth.keys()).collect();
    let mut videos = Vec::new();
    let mut excluded = Vec::new();
    for id in ids {
        match (proposals.get(id), ground_truth.get(id)) {
            (Some(segs), Some(gt)) => {
                let ann = gt.normalized()?;
                videos.push(VideoResult::new(
                    ann.instances,
                    from_seconds(segs, gt.duration),
                ));
            }
            _ => excluded.push(id.clone()),
        }
    }
    if !excluded.is_empty() {
        log::warn!(
            "{} video ids appear on only one side and are excluded: {}",
            excluded.len(),
            excluded.join(", ")
        );
    }
    Ok((videos, excluded))
}

/// Evaluates proposals against ground truth; see [`video_results`].
pub fn evaluate_files(
    proposals: &ProposalFile,
    ground_truth: &AnnotationFile,
    metric: &MetricConfig,
) -> Result<(Metrics, Vec<String>)> {
    let (videos, excluded) = video_results(proposals, ground_truth)?;
    Ok((evaluate(&videos, metric)?, excluded))
}
