use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    /// Exponentially growing dilation `2^i`.
    #[serde(rename = "E")]
    Expand,
    /// Fixed smoothing dilation, coprime with every power of two.
    #[serde(rename = "S")]
    Smooth,
}

/// Ordered `(kind, dilation)` list of the stacked multi-path blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilationSchedule {
    entries: Vec<(BlockKind, usize)>,
}

impl DilationSchedule {
    /// `E2, S, E4, S, ..., E(2^n), S`.
    pub fn alternating(n_blocks: usize, r_smooth: usize) -> Self {
        let entries = (1..=n_blocks)
            .flat_map(|i| {
                [
                    (BlockKind::Expand, 1usize << i),
                    (BlockKind::Smooth, r_smooth),
                ]
            })
            .collect();
        Self { entries }
    }

    /// Ablation without smoothing blocks: `E2, E4, ..., E(2^n)`.
    pub fn expand_only(n_blocks: usize) -> Self {
        Self {
            entries: (1..=n_blocks)
                .map(|i| (BlockKind::Expand, 1usize << i))
                .collect(),
        }
    }

    pub fn from_entries(entries: Vec<(BlockKind, usize)>) -> Result<Self> {
        let s = Self { entries };
        s.validate()?;
        Ok(s)
    }

    pub fn entries(&self) -> &[(BlockKind, usize)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_smoothing(&self) -> bool {
        self.entries.iter().any(|(k, _)| *k == BlockKind::Smooth)
    }

    /// Expansion blocks must carry `2^1, 2^2, ...` in order. Smoothing blocks
    /// share one odd dilation and strictly alternate with expansion blocks;
    /// a schedule without any smoothing block is accepted as the ablation.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::config("dilation schedule is empty"));
        }
        let smoothing = self.has_smoothing();
        let mut expected_exp = 1u32;
        let mut r_smooth = None;
        for (pos, &(kind, r)) in self.entries.iter().enumerate() {
            match kind {
                BlockKind::Expand => {
                    if smoothing && pos % 2 != 0 {
                        return Err(Error::config(format!(
                            "block {pos}: expected S, found E{r}"
                        )));
                    }
                    if r != 1usize << expected_exp {
                        return Err(Error::config(format!(
                            "block {pos}: expansion dilation {r}, expected {}",
                            1usize << expected_exp
                        )));
                    }
                    expected_exp += 1;
                }
                BlockKind::Smooth => {
                    if pos % 2 != 1 {
                        return Err(Error::config(format!(
                            "block {pos}: expected E, found S{r}"
                        )));
                    }
                    if r % 2 == 0 {
                        return Err(Error::config(format!(
                            "smoothing dilation {r} shares a factor with powers of two"
                        )));
                    }
                    if *r_smooth.get_or_insert(r) != r {
                        return Err(Error::config("smoothing blocks use differing dilations"));
                    }
                }
            }
        }
        if smoothing && !self.entries.len().is_multiple_of(2) {
            return Err(Error::config(
                "alternating schedule must end with a smoothing block",
            ));
        }
        Ok(())
    }
}

impl fmt::Display for DilationSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|(k, r)| match k {
                BlockKind::Expand => format!("E{r}"),
                BlockKind::Smooth => format!("S{r}"),
            })
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_block_schedule() {
        let s = DilationSchedule::alternating(6, 3);
        assert_eq!(s.to_string(), "E2,S3,E4,S3,E8,S3,E16,S3,E32,S3,E64,S3");
        assert_eq!(s.len(), 12);
        s.validate().unwrap();
    }

    #[test]
    fn expand_only_is_valid_ablation() {
        let s = DilationSchedule::expand_only(3);
        assert_eq!(s.to_string(), "E2,E4,E8");
        s.validate().unwrap();
    }

    #[test]
    fn rejects_bad_schedules() {
        use BlockKind::*;
        assert!(DilationSchedule::from_entries(vec![(Expand, 2), (Smooth, 4)]).is_err());
        assert!(DilationSchedule::from_entries(vec![(Expand, 4), (Smooth, 3)]).is_err());
        assert!(DilationSchedule::from_entries(vec![(Smooth, 3), (Expand, 2)]).is_err());
        assert!(
            DilationSchedule::from_entries(vec![(Expand, 2), (Expand, 4), (Smooth, 3)]).is_err()
        );
        assert!(DilationSchedule::from_entries(vec![
            (Expand, 2),
            (Smooth, 3),
            (Expand, 4),
            (Smooth, 5)
        ])
        .is_err());
        assert!(DilationSchedule::from_entries(vec![]).is_err());
    }
}
