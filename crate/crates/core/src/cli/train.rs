use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::select_subset;
use crate::data::{entry_annotation, load_features, rescale, window, Manifest, WindowMode};
use crate::error::{Error, Result};
use crate::labels::{GroundTruth, VideoAnnotation};
use crate::loss::{total_loss, LossBreakdown};
use crate::model::Dcan;
use crate::nn::ParamStore;
use crate::optim::Adam;
use crate::tensor::{Graph, Tensor};

/// Subdirectory of a training output holding the latest checkpoint.
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOG_FILE: &str = "train_log.jsonl";

/// One fixed-length training input with its targets.
#[derive(Clone, Debug)]
pub struct Sample {
    pub video_id: String,
    pub offset: usize,
    /// `[C_rgb, T]`
    pub rgb: Tensor<f64>,
    /// `[C_flow, T]`
    pub flow: Tensor<f64>,
    pub gt: GroundTruth,
}

/// Loads the training subset of a corpus and turns it into samples:
/// rescaled whole videos, or windows that contain at least one instance.
pub fn training_samples(cfg: &RunConfig, manifest: &Manifest, root: &Path) -> Result<Vec<Sample>> {
    let (t, d) = (cfg.model.temporal_len, cfg.model.max_duration);
    let entries = select_subset(manifest, &cfg.train_subset);
    let per_video: Vec<Vec<Sample>> = entries
        .par_iter()
        .map(|&(id, entry)| -> Result<Vec<Sample>> {
            let seq = load_features(root, id, entry)?;
            let ann = entry_annotation(entry)?;
            if ann.instances.is_empty() {
                log::warn!("{id}: no annotated instances, skipped for training");
                return Ok(Vec::new());
            }
            if cfg.dataset.windowed() {
                let step_seconds = entry.duration / seq.len() as f64;
                window(&seq, &ann.instances, t, cfg.stride(), WindowMode::Train)?
                    .into_iter()
                    .map(|clip| {
                        let ann = VideoAnnotation::new(clip.instances, step_seconds * t as f64)?;
                        Ok(Sample {
                            video_id: clip.video_id,
                            offset: clip.offset,
                            rgb: clip.rgb,
                            flow: clip.flow,
                            gt: GroundTruth::new(&ann, t, d, &cfg.labels)?,
                        })
                    })
                    .collect()
            } else {
                let seq = if seq.len() == t {
                    seq
                } else {
                    rescale(&seq, t)?
                };
                Ok(vec![Sample {
                    video_id: id.clone(),
                    offset: 0,
                    gt: GroundTruth::new(&ann, t, d, &cfg.labels)?,
                    rgb: seq.rgb,
                    flow: seq.flow,
                }])
            }
        })
        .collect::<Result<_>>()?;
    Ok(per_video.into_iter().flatten().collect())
}

/// Stacks `[C, T]` tensors of the selected samples into `[B, C, T]`.
fn stack(
    samples: &[Sample],
    idx: &[usize],
    pick: impl Fn(&Sample) -> &Tensor<f64>,
) -> Result<Tensor<f64>> {
    let first = pick(&samples[idx[0]]).shape().to_vec();
    let mut data = Vec::with_capacity(idx.len() * first.iter().product::<usize>());
    for &i in idx {
        let x = pick(&samples[i]);
        if x.shape() != first.as_slice() {
            return Err(Error::dim(format!(
                "sample {} has shape {:?}, expected {first:?}",
                samples[i].video_id,
                x.shape()
            )));
        }
        data.extend_from_slice(x.data());
    }
    Tensor::new([idx.len(), first[0], first[1]], data)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Where a training run writes its artifacts.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join(CHECKPOINT_DIR)
    }
}

/// Seeded minibatch training with Adam. The sample order is reshuffled
/// every epoch; a checkpoint is written after each epoch when `out` is
/// given, so the final checkpoint is the last epoch's.
pub fn train(
    cfg: &RunConfig,
    samples: &[Sample],
    out: Option<&TrainOutput>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<Dcan<f64>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::config("no training samples"));
    }
    let (rgb_c, flow_c) = (samples[0].rgb.shape()[0], samples[0].flow.shape()[0]);
    if rgb_c != cfg.model.rgb_dim || flow_c != cfg.model.flow_dim {
        return Err(Error::config(format!(
            "features have {rgb_c}/{flow_c} channels, model expects {}/{}",
            cfg.model.rgb_dim, cfg.model.flow_dim
        )));
    }
    let mut model = Dcan::<f64>::new(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(model.params(), &cfg.optimizer);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut loss_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    loss_rng.set_stream(2);
    let mut log = match out {
        Some(o) => {
            fs::create_dir_all(&o.dir)?;
            fs::write(
                o.dir.join("config.json"),
                serde_json::to_string_pretty(cfg)?,
            )?;
            Some(fs::File::create(o.dir.join(LOG_FILE))?)
        }
        None => None,
    };

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.optimizer.schedule.epochs() {
        let lr = cfg.optimizer.schedule.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.optimizer.batch_size) {
            step += 1;
            let fail = |e: Error| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, step {step}: {msg}")),
                other => other,
            };
            let rgb = stack(samples, batch, |s| &s.rgb)?;
            let flow = stack(samples, batch, |s| &s.flow)?;
            let gts: Vec<GroundTruth> = batch.iter().map(|&i| samples[i].gt.clone()).collect();
            let graph = Graph::new();
            let p = model.params().bind(&graph);
            let fwd = model
                .forward(&p, graph.constant(rgb), graph.constant(flow))
                .map_err(fail)?;
            let (loss, parts) =
                total_loss(&fwd, &gts, &p, &cfg.loss, &mut loss_rng).map_err(fail)?;
            loss.backward()?;
            let grads = p.grads();
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(fail(Error::Numeric(format!(
                    "non-finite gradient, losses {parts:?}"
                ))));
            }
            adam.update(model.params_mut(), &grads, lr)?;
            let record = StepRecord {
                epoch,
                step,
                lr,
                loss: parts,
            };
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&record)?)?;
            }
            on_step(&record);
        }
        if let Some(o) = out {
            let extra = serde_json::json!({ "epoch": epoch + 1, "step": step, "seed": cfg.seed, "model": cfg.model });
            model.params().save(o.checkpoint(), &extra)?;
            log::info!("epoch {} done after {step} steps", epoch + 1);
        }
    }
    Ok(model)
}

/// Loads a checkpoint into a model built from `cfg`. Accepts either the
/// checkpoint directory or a training output containing one.
pub fn load_model(cfg: &RunConfig, path: &Path) -> Result<Dcan<f64>> {
    let dir = if path.join(CHECKPOINT_DIR).is_dir() {
        path.join(CHECKPOINT_DIR)
    } else {
        path.to_path_buf()
    };
    let (store, _) = ParamStore::<f64>::load(&dir)?;
    let mut model = Dcan::<f64>::new(cfg.model.clone(), cfg.seed)?;
    model.params_mut().assign_from(&store)?;
    Ok(model)
}
