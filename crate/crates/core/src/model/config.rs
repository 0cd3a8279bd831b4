use serde::{Deserialize, Serialize};

use super::schedule::DilationSchedule;
use crate::error::{Error, Result};

/// Network hyper-parameters. Field names double as config-file keys.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Temporal length `T` in snippets.
    #[serde(alias = "T")]
    pub temporal_len: usize,
    /// Rows `D` of the matching map (maximum proposal duration in snippets).
    #[serde(alias = "D")]
    pub max_duration: usize,
    pub rgb_dim: usize,
    pub flow_dim: usize,
    /// Filters per base-network path.
    pub base_channels: usize,
    pub n_base: usize,
    /// Number of expansion blocks (and of smoothing blocks).
    pub n_blocks: usize,
    pub r_smooth: usize,
    /// Include smoothing blocks; `false` gives the expansion-only ablation.
    pub smoothing: bool,
    pub group_size: usize,
    pub n_sample: usize,
    /// Channels of the reduced feature fed to group sampling.
    pub sample_channels: usize,
    pub c_group: usize,
    pub c_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            temporal_len: 100,
            max_duration: 100,
            rgb_dim: 200,
            flow_dim: 200,
            base_channels: 128,
            n_base: 3,
            n_blocks: 6,
            r_smooth: 3,
            smoothing: true,
            group_size: 2,
            n_sample: 32,
            sample_channels: 128,
            c_group: 512,
            c_hidden: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let (t, d, g) = (self.temporal_len, self.max_duration, self.group_size);
        if t < 2 {
            return fail(format!("temporal_len {t} < 2"));
        }
        if d == 0 || d > t {
            return fail(format!("max_duration {d} must lie in 1..={t}"));
        }
        if g == 0 || !g.is_power_of_two() {
            return fail(format!("group_size {g} must be a power of two"));
        }
        if t % g != 0 || d % g != 0 {
            return fail(format!(
                "T = {t} and D = {d} must both be multiples of G = {g}"
            ));
        }
        if self.r_smooth.is_multiple_of(2) {
            return fail(format!(
                "r_smooth {} is not coprime with powers of two",
                self.r_smooth
            ));
        }
        if self.n_sample < 2 {
            return fail("n_sample must be at least 2".into());
        }
        for (name, v) in [
            ("rgb_dim", self.rgb_dim),
            ("flow_dim", self.flow_dim),
            ("base_channels", self.base_channels),
            ("n_base", self.n_base),
            ("n_blocks", self.n_blocks),
            ("sample_channels", self.sample_channels),
            ("c_group", self.c_group),
            ("c_hidden", self.c_hidden),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        self.schedule().validate()
    }

    pub fn schedule(&self) -> DilationSchedule {
        if self.smoothing {
            DilationSchedule::alternating(self.n_blocks, self.r_smooth)
        } else {
            DilationSchedule::expand_only(self.n_blocks)
        }
    }

    /// Group-map extent `(D / G, T / G)`.
    pub fn group_grid(&self) -> (usize, usize) {
        (
            self.max_duration / self.group_size,
            self.temporal_len / self.group_size,
        )
    }

    /// Number of ×2 upsampling stages in the refinement network.
    pub fn refinement_stages(&self) -> usize {
        self.group_size.trailing_zeros() as usize
    }

    /// Channel widths after the linear map and after each upsampling stage,
    /// interpolated geometrically from `c_group` to `c_hidden`.
    pub fn refinement_channels(&self) -> Vec<usize> {
        let stages = self.refinement_stages();
        let (a, b) = (self.c_group as f64, self.c_hidden as f64);
        let mut out = vec![self.c_group];
        for s in 1..=stages {
            let c = if s == stages {
                self.c_hidden
            } else {
                (a * (b / a).powf(s as f64 / stages as f64)).round() as usize
            };
            out.push(c.max(1));
        }
        out
    }

    /// Channels of the concatenated base feature.
    pub fn feature_channels(&self) -> usize {
        2 * self.base_channels
    }

    /// Matching-map validity: cell `(i, j)` spans `[j, j + i + 1]` on the grid.
    pub fn cell_valid(&self, i: usize, j: usize) -> bool {
        cell_valid(self.temporal_len, i, j)
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        valid_mask(self.temporal_len, self.max_duration)
    }
}

/// Row `i` of the matching map holds proposals lasting `i + 1` grid units;
/// column `j` is the start position.
pub fn cell_interval(i: usize, j: usize) -> (usize, usize) {
    (j, j + i + 1)
}

pub fn cell_valid(t: usize, i: usize, j: usize) -> bool {
    j + i < t
}

/// Row-major `D x T` validity mask.
pub fn valid_mask(t: usize, d: usize) -> Vec<bool> {
    (0..d)
        .flat_map(|i| (0..t).map(move |j| cell_valid(t, i, j)))
        .collect()
}
