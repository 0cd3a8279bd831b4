use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::sample::{group_sample, SamplingPlan};
use super::schedule::{BlockKind, DilationSchedule};
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv1dLayer, Conv2dLayer, Deconv2dLayer, NormLayer, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{concat, sum_all, Graph, Tensor, Var};

/// One multi-path block: dilated long path, dense short path and shortcut,
/// each normalized, summed and rectified.
#[derive(Clone, Debug)]
pub struct Mptc {
    pub kind: BlockKind,
    pub dilation: usize,
    long: Conv1dLayer,
    short: Conv1dLayer,
    norm_long: NormLayer,
    norm_short: NormLayer,
    norm_skip: NormLayer,
}

impl Mptc {
    fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        channels: usize,
        kind: BlockKind,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            kind,
            dilation,
            long: Conv1dLayer::new(
                store,
                &format!("{name}.long"),
                channels,
                channels,
                3,
                dilation,
                rng,
            ),
            short: Conv1dLayer::new(
                store,
                &format!("{name}.short"),
                channels,
                channels,
                3,
                1,
                rng,
            ),
            norm_long: NormLayer::new(store, &format!("{name}.norm_long"), channels),
            norm_short: NormLayer::new(store, &format!("{name}.norm_short"), channels),
            norm_skip: NormLayer::new(store, &format!("{name}.norm_skip"), channels),
        }
    }

    pub fn forward<'g, S: Scalar>(&self, p: &Bound<'g, S>, x: Var<'g, S>) -> Result<Var<'g, S>> {
        let long = self.norm_long.forward(p, self.long.forward(p, x)?)?;
        let short = self.norm_short.forward(p, self.short.forward(p, x)?)?;
        let skip = self.norm_skip.forward(p, x)?;
        Ok(sum_all(&[long, short, skip])?.relu())
    }

    pub fn long_path(&self) -> &Conv1dLayer {
        &self.long
    }

    pub fn short_path(&self) -> &Conv1dLayer {
        &self.short
    }
}

/// Recorded outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars<'g, S: Scalar> {
    /// `[B, T]`
    pub p_start: Var<'g, S>,
    /// `[B, T]`
    pub p_end: Var<'g, S>,
    /// `[B, D, T]`
    pub m_cls: Var<'g, S>,
    /// `[B, D, T]`
    pub m_reg: Var<'g, S>,
}

/// Network outputs detached from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<S: Scalar = f64> {
    pub p_start: Tensor<S>,
    pub p_end: Tensor<S>,
    pub m_cls: Tensor<S>,
    pub m_reg: Tensor<S>,
    /// Row-major `D x T`, shared by every sample of the batch.
    pub valid_mask: Vec<bool>,
}

impl<S: Scalar> ForwardOutput<S> {
    pub fn batch(&self) -> usize {
        self.p_start.shape()[0]
    }
}

/// The full network: base network, boundary branch (stacked multi-path
/// blocks) and matching branch (group sampling plus refinement).
#[derive(Clone, Debug)]
pub struct Dcan<S: Scalar = f64> {
    cfg: ModelConfig,
    schedule: DilationSchedule,
    params: ParamStore<S>,
    rgb_path: Vec<Conv1dLayer>,
    flow_path: Vec<Conv1dLayer>,
    blocks: Vec<Mptc>,
    boundary_head: Conv1dLayer,
    reduce: Conv1dLayer,
    group_linear: Conv1dLayer,
    upsample: Vec<Deconv2dLayer>,
    relation: Conv2dLayer,
    matching_head: Conv2dLayer,
    plan: Arc<SamplingPlan>,
}

impl<S: Scalar> Dcan<S> {
    /// Builds the network with parameters drawn deterministically from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bc = cfg.base_channels;
        let path = |store: &mut ParamStore<S>, rng: &mut ChaCha8Rng, name: &str, c_in: usize| {
            (0..cfg.n_base)
                .map(|l| {
                    let c = if l == 0 { c_in } else { bc };
                    Conv1dLayer::new(store, &format!("base.{name}.{l}"), c, bc, 3, 1, rng)
                })
                .collect::<Vec<_>>()
        };
        let rgb_path = path(&mut store, &mut rng, "rgb", cfg.rgb_dim);
        let flow_path = path(&mut store, &mut rng, "flow", cfg.flow_dim);

        let fc = cfg.feature_channels();
        let schedule = cfg.schedule();
        let blocks = schedule
            .entries()
            .iter()
            .enumerate()
            .map(|(i, &(kind, r))| {
                Mptc::new(&mut store, &format!("mtca.{i}"), fc, kind, r, &mut rng)
            })
            .collect();
        let boundary_head = Conv1dLayer::new(&mut store, "mtca.head", fc, 2, 3, 1, &mut rng);

        let reduce = Conv1dLayer::new(
            &mut store,
            "cfm.reduce",
            fc,
            cfg.sample_channels,
            3,
            1,
            &mut rng,
        );
        let widths = cfg.refinement_channels();
        let group_linear = Conv1dLayer::new(
            &mut store,
            "cfm.linear",
            cfg.sample_channels * cfg.n_sample,
            widths[0],
            1,
            1,
            &mut rng,
        );
        let upsample = widths
            .windows(2)
            .enumerate()
            .map(|(s, w)| {
                Deconv2dLayer::new(&mut store, &format!("cfm.deconv.{s}"), w[0], w[1], &mut rng)
            })
            .collect();
        let last = *widths.last().expect("nonempty");
        let relation =
            Conv2dLayer::new(&mut store, "cfm.relation", last, cfg.c_hidden, 3, &mut rng);
        let matching_head = Conv2dLayer::new(&mut store, "cfm.head", cfg.c_hidden, 2, 1, &mut rng);
        let plan = Arc::new(SamplingPlan::new(
            cfg.temporal_len,
            cfg.max_duration,
            cfg.group_size,
            cfg.n_sample,
        ));
        Ok(Self {
            cfg,
            schedule,
            params: store,
            rgb_path,
            flow_path,
            blocks,
            boundary_head,
            reduce,
            group_linear,
            upsample,
            relation,
            matching_head,
            plan,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &DilationSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn blocks(&self) -> &[Mptc] {
        &self.blocks
    }

    pub fn sampling_plan(&self) -> &Arc<SamplingPlan> {
        &self.plan
    }

    /// Dual-path local aggregation: `[B, rgb_dim, T]`, `[B, flow_dim, T]` ->
    /// `[B, 2 * base_channels, T]`.
    pub fn base_forward<'g>(
        &self,
        p: &Bound<'g, S>,
        rgb: Var<'g, S>,
        flow: Var<'g, S>,
    ) -> Result<Var<'g, S>> {
        let (rs, fs) = (rgb.shape(), flow.shape());
        if rs.len() != 3 || fs.len() != 3 || rs[0] != fs[0] || rs[2] != fs[2] {
            return Err(Error::dim(format!(
                "rgb {rs:?} and flow {fs:?} streams do not align"
            )));
        }
        if rs[2] != self.cfg.temporal_len {
            return Err(Error::dim(format!(
                "input length {} differs from configured T = {}",
                rs[2], self.cfg.temporal_len
            )));
        }
        let run = |layers: &[Conv1dLayer], mut x: Var<'g, S>| -> Result<Var<'g, S>> {
            for layer in layers {
                x = layer.forward(p, x)?.relu();
            }
            Ok(x)
        };
        let r = run(&self.rgb_path, rgb)?;
        let f = run(&self.flow_path, flow)?;
        concat(&[r, f], 1)
    }

    /// Stacked multi-path blocks and the boundary head; returns
    /// `(p_start, p_end)`, each `[B, T]`.
    pub fn mtca_forward<'g>(
        &self,
        p: &Bound<'g, S>,
        feature: Var<'g, S>,
    ) -> Result<(Var<'g, S>, Var<'g, S>)> {
        let mut x = feature;
        for block in &self.blocks {
            x = block.forward(p, x)?;
        }
        let probs = self.boundary_head.forward(p, x)?.sigmoid();
        let shape = probs.shape();
        let (b, t) = (shape[0], shape[2]);
        let start = probs.narrow(1, 0, 1)?.reshape([b, t])?;
        let end = probs.narrow(1, 1, 1)?.reshape([b, t])?;
        Ok((start, end))
    }

    /// Reduced feature `F_p` feeding group sampling, `[B, sample_channels, T]`.
    pub fn reduce_forward<'g>(&self, p: &Bound<'g, S>, feature: Var<'g, S>) -> Result<Var<'g, S>> {
        Ok(self.reduce.forward(p, feature)?.relu())
    }

    /// `[B, C, T] -> [B, C, N_sample, D/G, T/G]`.
    pub fn group_sample<'g>(&self, f_p: Var<'g, S>) -> Result<Var<'g, S>> {
        group_sample(f_p, &self.plan)
    }

    /// Coarse group map `[B, c_group, D/G, T/G]`.
    pub fn group_map<'g>(&self, p: &Bound<'g, S>, f_p: Var<'g, S>) -> Result<Var<'g, S>> {
        let sampled = self.group_sample(f_p)?;
        let b = sampled.shape()[0];
        let (rows, cols) = self.cfg.group_grid();
        let flat =
            sampled.reshape([b, self.cfg.sample_channels * self.cfg.n_sample, rows * cols])?;
        self.group_linear
            .forward(p, flat)?
            .reshape([b, self.group_linear.out_channels, rows, cols])
    }

    /// Refines a group map to `[B, c_hidden, D, T]` matching features.
    pub fn refine<'g>(&self, p: &Bound<'g, S>, group_map: Var<'g, S>) -> Result<Var<'g, S>> {
        let mut x = group_map;
        for stage in &self.upsample {
            x = stage.forward(p, x)?.relu();
        }
        Ok(self.relation.forward(p, x)?.relu())
    }

    /// Matching branch: `(m_cls, m_reg)`, each `[B, D, T]`.
    pub fn cfm_forward<'g>(
        &self,
        p: &Bound<'g, S>,
        feature: Var<'g, S>,
    ) -> Result<(Var<'g, S>, Var<'g, S>)> {
        let f_p = self.reduce_forward(p, feature)?;
        let coarse = self.group_map(p, f_p)?;
        let fine = self.refine(p, coarse)?;
        let maps = self.matching_head.forward(p, fine)?.sigmoid();
        let s = maps.shape();
        let (b, d, t) = (s[0], s[2], s[3]);
        let cls = maps.narrow(1, 0, 1)?.reshape([b, d, t])?;
        let reg = maps.narrow(1, 1, 1)?.reshape([b, d, t])?;
        Ok((cls, reg))
    }

    pub fn forward<'g>(
        &self,
        p: &Bound<'g, S>,
        rgb: Var<'g, S>,
        flow: Var<'g, S>,
    ) -> Result<ForwardVars<'g, S>> {
        let feature = self.base_forward(p, rgb, flow)?;
        let (p_start, p_end) = self.mtca_forward(p, feature)?;
        let (m_cls, m_reg) = self.cfm_forward(p, feature)?;
        Ok(ForwardVars {
            p_start,
            p_end,
            m_cls,
            m_reg,
        })
    }

    /// Inference forward on `[B, rgb_dim, T]` / `[B, flow_dim, T]` tensors.
    pub fn predict(&self, rgb: &Tensor<S>, flow: &Tensor<S>) -> Result<ForwardOutput<S>> {
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let out = self.forward(&p, g.constant(rgb.clone()), g.constant(flow.clone()))?;
        Ok(ForwardOutput {
            p_start: out.p_start.to_tensor(),
            p_end: out.p_end.to_tensor(),
            m_cls: out.m_cls.to_tensor(),
            m_reg: out.m_reg.to_tensor(),
            valid_mask: self.cfg.valid_mask(),
        })
    }
}
