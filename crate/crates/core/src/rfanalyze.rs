//! Exact receptive-field analysis of 1-D convolution stacks.
//!
//! Every layer contributes a set of input offsets; the receptive field of a
//! stack is the iterated Minkowski sum of those sets. Zero padding is ignored
//! (the signal is treated as infinite), so the result describes kernel
//! support only.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockKind, DilationSchedule, ModelConfig};

/// One stride-1 convolution layer.
///
/// A multi-path layer is the union of a long path (dilation `r`), a short
/// path (same kernel, dilation 1) and an identity shortcut.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kernel: usize,
    pub dilation: usize,
    pub multi_path: bool,
}

impl LayerSpec {
    pub fn new(
        name: impl Into<String>,
        kernel: usize,
        dilation: usize,
        multi_path: bool,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::config(format!("kernel must be odd, got {kernel}")));
        }
        if dilation == 0 {
            return Err(Error::config("dilation must be at least 1"));
        }
        Ok(Self {
            name: name.into(),
            kernel,
            dilation,
            multi_path,
        })
    }

    pub fn single(name: impl Into<String>, kernel: usize, dilation: usize) -> Result<Self> {
        Self::new(name, kernel, dilation, false)
    }

    pub fn multi(name: impl Into<String>, kernel: usize, dilation: usize) -> Result<Self> {
        Self::new(name, kernel, dilation, true)
    }

    /// Input offsets touched by one output position of this layer alone.
    pub fn offsets(&self) -> BTreeSet<i64> {
        let half = (self.kernel / 2) as i64;
        let taps = |r: i64| (-half..=half).map(move |k| k * r);
        let mut set: BTreeSet<i64> = taps(self.dilation as i64).collect();
        if self.multi_path {
            set.extend(taps(1));
            set.insert(0);
        }
        set
    }

    /// Half-width of the layer's support.
    pub fn reach(&self) -> usize {
        let long = self.dilation * (self.kernel / 2);
        if self.multi_path {
            long.max(self.kernel / 2)
        } else {
            long
        }
    }
}

/// Sorted set of input offsets reachable from one output position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReceptiveField {
    offsets: Vec<i64>,
}

impl ReceptiveField {
    pub fn from_offsets(offsets: impl IntoIterator<Item = i64>) -> Self {
        let set: BTreeSet<i64> = offsets.into_iter().collect();
        Self {
            offsets: set.into_iter().collect(),
        }
    }

    pub fn offsets(&self) -> &[i64] {
        &self.offsets
    }

    pub fn min(&self) -> i64 {
        self.offsets.first().copied().unwrap_or(0)
    }

    pub fn max(&self) -> i64 {
        self.offsets.last().copied().unwrap_or(0)
    }

    /// Extent from the leftmost to the rightmost offset, inclusive.
    pub fn width(&self) -> usize {
        if self.offsets.is_empty() {
            0
        } else {
            (self.max() - self.min() + 1) as usize
        }
    }

    pub fn contains(&self, offset: i64) -> bool {
        self.offsets.binary_search(&offset).is_ok()
    }
}

fn minkowski(a: &BTreeSet<i64>, b: &BTreeSet<i64>) -> BTreeSet<i64> {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| x + y))
        .collect()
}

/// Receptive field of a whole stack.
pub fn propagate(stack: &[LayerSpec]) -> Result<ReceptiveField> {
    Ok(propagate_cumulative(stack)?.pop().expect("nonempty stack"))
}

/// Receptive field after each layer of the stack.
pub fn propagate_cumulative(stack: &[LayerSpec]) -> Result<Vec<ReceptiveField>> {
    if stack.is_empty() {
        return Err(Error::Contract("receptive field of an empty stack".into()));
    }
    let mut acc: BTreeSet<i64> = BTreeSet::from([0]);
    let mut out = Vec::with_capacity(stack.len());
    for layer in stack {
        acc = minkowski(&acc, &layer.offsets());
        out.push(ReceptiveField::from_offsets(acc.iter().copied()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContiguityReport {
    pub contiguous: bool,
    pub holes: Vec<i64>,
}

/// Offsets strictly between the extremes that the field never reaches.
pub fn check_contiguity(rf: &ReceptiveField) -> ContiguityReport {
    let holes: Vec<i64> = rf
        .offsets
        .windows(2)
        .flat_map(|w| (w[0] + 1)..w[1])
        .collect();
    ContiguityReport {
        contiguous: holes.is_empty(),
        holes,
    }
}

/// Base network layers: `n_base` kernel-3, dilation-1 convolutions.
pub fn base_stack(n_base: usize) -> Vec<LayerSpec> {
    (0..n_base)
        .map(|i| LayerSpec {
            name: format!("base.{i}"),
            kernel: 3,
            dilation: 1,
            multi_path: false,
        })
        .collect()
}

/// Multi-path blocks of a dilation schedule.
pub fn mtca_stack(schedule: &DilationSchedule) -> Vec<LayerSpec> {
    schedule
        .entries()
        .iter()
        .enumerate()
        .map(|(i, &(kind, r))| LayerSpec {
            name: format!("mtca.{i}.{}", kind_tag(kind)),
            kernel: 3,
            dilation: r,
            multi_path: true,
        })
        .collect()
}

/// Long paths of a dilation schedule alone, without short paths or
/// shortcuts: the plain stacked-dilation baseline.
pub fn long_path_stack(schedule: &DilationSchedule) -> Vec<LayerSpec> {
    schedule
        .entries()
        .iter()
        .enumerate()
        .map(|(i, &(kind, r))| LayerSpec {
            name: format!("long.{i}.{}", kind_tag(kind)),
            kernel: 3,
            dilation: r,
            multi_path: false,
        })
        .collect()
}

/// Base network followed by the temporal context blocks of `cfg`.
pub fn model_stack(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let mut stack = base_stack(cfg.n_base);
    stack.extend(mtca_stack(&cfg.schedule()));
    stack
}

fn kind_tag(kind: BlockKind) -> &'static str {
    match kind {
        BlockKind::Expand => "E",
        BlockKind::Smooth => "S",
    }
}

/// Result of analysing one stack, printable as a text table.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub layers: Vec<LayerSpec>,
    pub cumulative: Vec<ReceptiveField>,
    pub report: ContiguityReport,
}

impl Analysis {
    pub fn new(stack: &[LayerSpec]) -> Result<Self> {
        let cumulative = propagate_cumulative(stack)?;
        let report = check_contiguity(cumulative.last().expect("nonempty stack"));
        Ok(Self {
            layers: stack.to_vec(),
            cumulative,
            report,
        })
    }

    pub fn field(&self) -> &ReceptiveField {
        self.cumulative.last().expect("nonempty stack")
    }
}

impl fmt::Display for Analysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# receptive field (stride 1, padding ignored: infinite signal)"
        )?;
        writeln!(
            f,
            "{:<14} {:>6} {:>8} {:>6} {:>13} {:>6} {:>6}",
            "layer", "kernel", "dilation", "paths", "span", "width", "holes"
        )?;
        for (layer, rf) in self.layers.iter().zip(&self.cumulative) {
            let holes = check_contiguity(rf).holes.len();
            writeln!(
                f,
                "{:<14} {:>6} {:>8} {:>6} {:>13} {:>6} {:>6}",
                layer.name,
                layer.kernel,
                layer.dilation,
                if layer.multi_path { "multi" } else { "single" },
                format!("[{}, {}]", rf.min(), rf.max()),
                rf.width(),
                holes,
            )?;
        }
        let rf = self.field();
        writeln!(f, "width: {}", rf.width())?;
        writeln!(
            f,
            "contiguous: {}",
            if self.report.contiguous { "yes" } else { "no" }
        )?;
        if !self.report.holes.is_empty() {
            let shown: Vec<String> = self
                .report
                .holes
                .iter()
                .take(32)
                .map(i64::to_string)
                .collect();
            let more = self.report.holes.len().saturating_sub(32);
            write!(
                f,
                "holes ({}): {}",
                self.report.holes.len(),
                shown.join(" ")
            )?;
            if more > 0 {
                write!(f, " ... (+{more})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    /// Brute force: enumerate every tap combination explicitly.
    fn oracle(stack: &[LayerSpec]) -> BTreeSet<i64> {
        let mut reach = BTreeSet::from([0i64]);
        for layer in stack {
            let half = (layer.kernel / 2) as i64;
            let mut next = BTreeSet::new();
            for &p in &reach {
                for k in -half..=half {
                    next.insert(p + k * layer.dilation as i64);
                    if layer.multi_path {
                        next.insert(p + k);
                    }
                }
                if layer.multi_path {
                    next.insert(p);
                }
            }
            reach = next;
        }
        reach
    }

    #[test]
    fn single_layer() {
        let rf = propagate(&[LayerSpec::single("a", 3, 1).unwrap()]).unwrap();
        assert_eq!(rf.offsets(), &[-1, 0, 1]);
        assert_eq!(rf.width(), 3);
        assert!(check_contiguity(&rf).contiguous);
    }

    #[test]
    fn stacked_even_dilations_leave_odd_holes() {
        let stack = long_path_stack(&DilationSchedule::expand_only(2));
        let rf = propagate(&stack).unwrap();
        assert_eq!(rf.offsets(), &[-6, -4, -2, 0, 2, 4, 6]);
        assert_eq!(check_contiguity(&rf).holes, vec![-5, -3, -1, 1, 3, 5]);
    }

    #[test]
    fn hole_report() {
        let report = check_contiguity(&ReceptiveField::from_offsets([-2, 0, 2]));
        assert!(!report.contiguous);
        assert_eq!(report.holes, vec![-1, 1]);
    }

    #[test]
    fn expand_only_long_paths_have_holes() {
        let stack = long_path_stack(&DilationSchedule::expand_only(3));
        let rf = propagate(&stack).unwrap();
        assert_eq!(
            rf.offsets().iter().copied().collect::<BTreeSet<_>>(),
            oracle(&stack)
        );
        let report = check_contiguity(&rf);
        assert!(!report.contiguous);
        assert!(report.holes.iter().all(|h| h % 2 != 0));
        assert_eq!(report.holes.len(), 14);
    }

    #[test]
    fn full_stack_is_contiguous() {
        let cfg = ModelConfig {
            n_blocks: 6,
            r_smooth: 3,
            n_base: 3,
            ..ModelConfig::default()
        };
        let stack = model_stack(&cfg);
        assert_eq!(stack.len(), 15);
        let rf = propagate(&stack).unwrap();
        assert_eq!(
            rf.offsets().iter().copied().collect::<BTreeSet<_>>(),
            oracle(&stack)
        );
        // Two parallel base paths add 2 per layer side, not 4: 289 + 6.
        assert_eq!(rf.width(), 295);
        assert!(check_contiguity(&rf).contiguous);
        let mtca = propagate(&mtca_stack(&cfg.schedule())).unwrap();
        assert_eq!(mtca.width(), 289);
    }

    #[test]
    fn rejects_bad_layers() {
        assert!(LayerSpec::single("a", 4, 1).is_err());
        assert!(LayerSpec::single("a", 3, 0).is_err());
        assert!(propagate(&[]).is_err());
    }

    #[test]
    fn table_lists_every_layer() {
        let stack = long_path_stack(&DilationSchedule::expand_only(3));
        let text = Analysis::new(&stack).unwrap().to_string();
        assert!(text.contains("contiguous: no"));
        assert!(text.contains("width: 29"));
        assert_eq!(text.lines().filter(|l| l.starts_with("long.")).count(), 3);
    }

    fn layer() -> impl Strategy<Value = LayerSpec> {
        (0usize..3, 1usize..6, any::<bool>())
            .prop_map(|(k, r, m)| LayerSpec::new("p", 2 * k + 1, r, m).unwrap())
    }

    proptest! {
        #[test]
        fn order_insensitive(stack in prop::collection::vec(layer(), 1..6), seed in any::<u64>()) {
            let mut shuffled = stack.clone();
            let n = shuffled.len();
            for i in 0..n {
                let j = (seed.rotate_left(i as u32) as usize) % n;
                shuffled.swap(i, j);
            }
            prop_assert_eq!(propagate(&stack).unwrap(), propagate(&shuffled).unwrap());
        }

        #[test]
        fn matches_oracle(stack in prop::collection::vec(layer(), 1..6)) {
            let rf = propagate(&stack).unwrap();
            prop_assert_eq!(rf.offsets().iter().copied().collect::<BTreeSet<_>>(), oracle(&stack));
            prop_assert!(rf.contains(0));
            prop_assert_eq!(rf.min(), -rf.max());
        }

        #[test]
        fn single_path_width_formula(stack in prop::collection::vec(layer(), 1..6)) {
            let single: Vec<LayerSpec> = stack.into_iter().map(|l| LayerSpec { multi_path: false, ..l }).collect();
            let expected = 1 + single.iter().map(|l| l.dilation * (l.kernel - 1)).sum::<usize>();
            prop_assert_eq!(propagate(&single).unwrap().width(), expected);
        }
    }
}
