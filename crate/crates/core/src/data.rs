//! Feature ingestion, rescaling, windowing and a seeded synthetic corpus.
//!
//! Feature streams are held channel-major, `[C, T_raw]`, which is the layout
//! the convolutions consume.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{RawSegment, VideoAnnotation};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    /// `[C_rgb, T_raw]`
    pub rgb: Tensor<f64>,
    /// `[C_flow, T_raw]`
    pub flow: Tensor<f64>,
    /// Snippets per feature step.
    pub frame_interval: usize,
    pub duration_seconds: f64,
}

impl FeatureSequence {
    pub fn new(
        video_id: impl Into<String>,
        rgb: Tensor<f64>,
        flow: Tensor<f64>,
        duration_seconds: f64,
    ) -> Result<Self> {
        if rgb.rank() != 2 || flow.rank() != 2 || rgb.shape()[1] != flow.shape()[1] {
            return Err(Error::dim(format!(
                "streams {:?} and {:?} are not aligned [C, T]",
                rgb.shape(),
                flow.shape()
            )));
        }
        if !rgb.is_finite() || !flow.is_finite() {
            return Err(Error::Numeric("non-finite feature values".into()));
        }
        Ok(Self {
            video_id: video_id.into(),
            rgb,
            flow,
            frame_interval: 1,
            duration_seconds,
        })
    }

    pub fn len(&self) -> usize {
        self.rgb.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Resamples every channel of `[C, T_raw]` to length `l`; output `t` reads
/// source position `t * (T_raw - 1) / (l - 1)` by linear interpolation.
pub fn rescale_stream(x: &Tensor<f64>, l: usize) -> Result<Tensor<f64>> {
    let (c, t_raw) = (x.shape()[0], x.shape()[1]);
    if t_raw < 2 || l < 2 {
        return Err(Error::config(format!(
            "rescale needs at least two samples ({t_raw} -> {l})"
        )));
    }
    let scale = (t_raw - 1) as f64 / (l - 1) as f64;
    let src = x.data();
    let mut out = Vec::with_capacity(c * l);
    for ch in 0..c {
        let row = &src[ch * t_raw..(ch + 1) * t_raw];
        for t in 0..l {
            let pos = t as f64 * scale;
            let lo = (pos.floor() as usize).min(t_raw - 2);
            let frac = pos - lo as f64;
            out.push(row[lo] * (1.0 - frac) + row[lo + 1] * frac);
        }
    }
    Tensor::new([c, l], out)
}

pub fn rescale(seq: &FeatureSequence, l: usize) -> Result<FeatureSequence> {
    Ok(FeatureSequence {
        rgb: rescale_stream(&seq.rgb, l)?,
        flow: rescale_stream(&seq.flow, l)?,
        ..seq.clone()
    })
}

/// Window start offsets: from 0 in steps of `stride`, until a window
/// reaches the end of the sequence.
pub fn window_offsets(t_raw: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut offsets = vec![0];
    let mut off = 0;
    while off + size < t_raw {
        off += stride;
        offsets.push(off);
    }
    offsets
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub video_id: String,
    /// First source step covered by the clip.
    pub offset: usize,
    /// Steps backed by real features; the rest is zero padding.
    pub valid_len: usize,
    /// `[C_rgb, size]`
    pub rgb: Tensor<f64>,
    /// `[C_flow, size]`
    pub flow: Tensor<f64>,
    /// Instances clipped to the window, normalized by the window size.
    pub instances: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowMode {
    /// Windows without any instance are dropped.
    Train,
    /// Every window is kept.
    Infer,
}

fn slice_padded(x: &Tensor<f64>, offset: usize, size: usize) -> Tensor<f64> {
    let (c, t) = (x.shape()[0], x.shape()[1]);
    Tensor::from_fn([c, size], |k| {
        let (ch, s) = (k / size, k % size);
        if offset + s < t {
            x.data()[ch * t + offset + s]
        } else {
            0.0
        }
    })
}

/// Clips `instances` (normalized to the whole sequence) to a window, in
/// source steps, and renormalizes by the window size.
pub fn clip_instances(
    instances: &[(f64, f64)],
    t_raw: usize,
    offset: usize,
    size: usize,
) -> Vec<(f64, f64)> {
    let (lo, hi) = (offset as f64, (offset + size) as f64);
    instances
        .iter()
        .filter_map(|&(s, e)| {
            let (s, e) = ((s * t_raw as f64).max(lo), (e * t_raw as f64).min(hi));
            (e > s).then(|| ((s - lo) / size as f64, (e - lo) / size as f64))
        })
        .collect()
}

/// Overlapping windows of `size` steps, `stride` apart, the last one zero
/// padded.
pub fn window(
    seq: &FeatureSequence,
    instances: &[(f64, f64)],
    size: usize,
    stride: usize,
    mode: WindowMode,
) -> Result<Vec<Clip>> {
    if size == 0 || stride == 0 {
        return Err(Error::config("window size and stride must be positive"));
    }
    let t_raw = seq.len();
    if t_raw == 0 {
        return Err(Error::config("cannot window an empty sequence"));
    }
    Ok(window_offsets(t_raw, size, stride)
        .into_iter()
        .map(|offset| Clip {
            video_id: seq.video_id.clone(),
            offset,
            valid_len: size.min(t_raw - offset),
            rgb: slice_padded(&seq.rgb, offset, size),
            flow: slice_padded(&seq.flow, offset, size),
            instances: clip_instances(instances, t_raw, offset, size),
        })
        .filter(|c| mode == WindowMode::Infer || !c.instances.is_empty())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_videos: usize,
    /// Inclusive range of sequence lengths.
    pub t_raw: (usize, usize),
    /// Inclusive range of instances per video.
    pub instances: (usize, usize),
    /// Range of instance durations as a fraction of the sequence.
    pub duration_frac: (f64, f64),
    pub rgb_dim: usize,
    pub flow_dim: usize,
    /// Pattern channels per stream.
    pub pattern_channels: usize,
    pub pattern_offset: f64,
    /// Width of the on and off ramps, in steps.
    pub ramp: f64,
    /// Minimum number of background steps between instances.
    pub min_gap: usize,
    pub noise: f64,
    pub seconds_per_step: f64,
    pub seed: u64,
    /// Prefix of generated video ids.
    pub prefix: String,
    /// The last `test_videos` videos form the `test` subset, the rest
    /// `train`; zero leaves videos unassigned.
    pub test_videos: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_videos: 250,
            t_raw: (100, 100),
            instances: (1, 3),
            duration_frac: (0.05, 0.3),
            rgb_dim: 16,
            flow_dim: 16,
            pattern_channels: 4,
            pattern_offset: 2.0,
            ramp: 2.0,
            min_gap: 2,
            noise: 1.0,
            seconds_per_step: 0.5,
            seed: 0,
            prefix: "syn".into(),
            test_videos: 50,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t_raw.0 >= 2
            && self.t_raw.0 <= self.t_raw.1
            && self.instances.0 >= 1
            && self.instances.0 <= self.instances.1
            && self.duration_frac.0 > 0.0
            && self.duration_frac.0 <= self.duration_frac.1
            && self.duration_frac.1 <= 1.0
            && self.pattern_channels <= self.rgb_dim.min(self.flow_dim)
            && self.noise >= 0.0
            && self.ramp >= 0.0
            && self.seconds_per_step > 0.0
            && self.test_videos <= self.n_videos;
        if !ok {
            return Err(Error::config(format!("invalid synthetic spec {self:?}")));
        }
        Ok(())
    }
}

/// One generated video: features plus its exact annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub features: FeatureSequence,
    pub annotation: VideoAnnotation,
}

/// Amplitude of the planted pattern at step `t` (centre `t + 0.5`) for an
/// instance `[s, e)` with ramps of width `ramp` centred on its boundaries.
pub fn pattern_envelope(t: usize, s: usize, e: usize, ramp: f64) -> f64 {
    let c = t as f64 + 0.5;
    let (s, e) = (s as f64, e as f64);
    if ramp == 0.0 {
        return if c > s && c < e { 1.0 } else { 0.0 };
    }
    let on = ((c - s) / ramp + 0.5).clamp(0.0, 1.0);
    let off = ((e - c) / ramp + 0.5).clamp(0.0, 1.0);
    on.min(off)
}

/// Disjoint integer instances: durations are drawn first, then the free
/// steps are split at random into the gaps between them.
fn place_instances(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    t_raw: usize,
) -> Result<Vec<(usize, usize)>> {
    let n = rng.gen_range(spec.instances.0..=spec.instances.1);
    let durations: Vec<usize> = (0..n)
        .map(|_| {
            let f = rng.gen_range(spec.duration_frac.0..=spec.duration_frac.1);
            ((f * t_raw as f64).round() as usize).max(1)
        })
        .collect();
    let used = durations.iter().sum::<usize>() + (n - 1) * spec.min_gap;
    if used > t_raw {
        return Err(Error::config(format!(
            "cannot pack {n} instances of total length {used} into {t_raw} steps"
        )));
    }
    let free = t_raw - used;
    let mut cuts: Vec<usize> = (0..n).map(|_| rng.gen_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(n);
    let mut cursor = 0;
    let mut prev_cut = 0;
    for (k, (&d, &cut)) in durations.iter().zip(&cuts).enumerate() {
        cursor += cut - prev_cut + if k > 0 { spec.min_gap } else { 0 };
        prev_cut = cut;
        out.push((cursor, cursor + d));
        cursor += d;
    }
    Ok(out)
}

fn stream(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    channels: usize,
    t_raw: usize,
    inst: &[(usize, usize)],
) -> Tensor<f64> {
    let mut x = Tensor::from_fn([channels, t_raw], |_| {
        spec.noise * rng.sample::<f64, _>(StandardNormal)
    });
    let data = x.data_mut();
    for ch in 0..spec.pattern_channels {
        for t in 0..t_raw {
            let amp: f64 = inst
                .iter()
                .map(|&(s, e)| pattern_envelope(t, s, e, spec.ramp))
                .fold(0.0, f64::max);
            data[ch * t_raw + t] += spec.pattern_offset * amp;
        }
    }
    x
}

pub fn generate_video(spec: &SyntheticSpec, index: usize) -> Result<Video> {
    spec.validate()?;
    // One stream per video keeps videos independent of generation order.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let t_raw = rng.gen_range(spec.t_raw.0..=spec.t_raw.1);
    let inst = place_instances(&mut rng, spec, t_raw)?;
    let rgb = stream(&mut rng, spec, spec.rgb_dim, t_raw, &inst);
    let flow = stream(&mut rng, spec, spec.flow_dim, t_raw, &inst);
    let duration = t_raw as f64 * spec.seconds_per_step;
    let id = format!("{}_{index:05}", spec.prefix);
    let instances = inst
        .iter()
        .map(|&(s, e)| (s as f64 / t_raw as f64, e as f64 / t_raw as f64))
        .collect();
    Ok(Video {
        features: FeatureSequence::new(id, rgb, flow, duration)?,
        annotation: VideoAnnotation::new(instances, duration)?,
    })
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Video>> {
    (0..spec.n_videos)
        .into_par_iter()
        .map(|i| generate_video(spec, i))
        .collect()
}

impl SyntheticSpec {
    pub fn subset_of(&self, index: usize) -> Option<String> {
        if self.test_videos == 0 {
            None
        } else if index + self.test_videos >= self.n_videos {
            Some("test".into())
        } else {
            Some("train".into())
        }
    }
}

/// Generated videos paired with their subset, ready for [`write_corpus`].
pub fn synthetic_corpus(spec: &SyntheticSpec) -> Result<Vec<(Video, Option<String>)>> {
    Ok(generate_synthetic(spec)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, spec.subset_of(i)))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub duration: f64,
    pub t_raw: usize,
    pub rgb_path: PathBuf,
    pub flow_path: PathBuf,
    pub annotations: Vec<RawSegment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
}

/// Video id to entry; paths are relative to the manifest's directory.
pub type Manifest = BTreeMap<String, ManifestEntry>;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes feature files under `dir/features` and the manifest at
/// `dir/manifest.json`. `subset` tags each video (e.g. train or test).
pub fn write_corpus(dir: &Path, videos: &[(Video, Option<String>)]) -> Result<Manifest> {
    fs::create_dir_all(dir.join("features"))?;
    let mut manifest = Manifest::new();
    for (v, subset) in videos {
        let id = &v.features.video_id;
        let rgb_path = PathBuf::from("features").join(format!("{id}.rgb.bin"));
        let flow_path = PathBuf::from("features").join(format!("{id}.flow.bin"));
        v.features.rgb.save(dir.join(&rgb_path))?;
        v.features.flow.save(dir.join(&flow_path))?;
        let d = v.annotation.duration_seconds;
        let annotations = v
            .annotation
            .instances
            .iter()
            .map(|&(s, e)| RawSegment {
                segment: [s * d, e * d],
                label: None,
            })
            .collect();
        manifest.insert(
            id.clone(),
            ManifestEntry {
                duration: d,
                t_raw: v.features.len(),
                rgb_path,
                flow_path,
                annotations,
                subset: subset.clone(),
            },
        );
    }
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Accepts either the manifest file or the directory holding it.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn load_manifest(path: &Path) -> Result<(Manifest, PathBuf)> {
    let file = manifest_path(path);
    let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&file)?)?;
    Ok((manifest, root))
}

pub fn load_features(root: &Path, id: &str, entry: &ManifestEntry) -> Result<FeatureSequence> {
    let rgb = Tensor::load(root.join(&entry.rgb_path))?;
    let flow = Tensor::load(root.join(&entry.flow_path))?;
    let seq = FeatureSequence::new(id, rgb, flow, entry.duration)?;
    if seq.len() != entry.t_raw {
        return Err(Error::Format(format!(
            "{id}: manifest says {} steps, features have {}",
            entry.t_raw,
            seq.len()
        )));
    }
    Ok(seq)
}

/// Normalized annotation of a manifest entry.
pub fn entry_annotation(entry: &ManifestEntry) -> Result<VideoAnnotation> {
    crate::labels::RawVideo {
        duration: entry.duration,
        annotations: entry.annotations.clone(),
    }
    .normalized()
}
