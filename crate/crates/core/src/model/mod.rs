//! The network: dual-path base network, multi-path temporal context
//! aggregation for boundaries, and coarse-to-fine matching for proposals.
//!
//! Matching-map cell `(i, j)` is the proposal `[j, j + i + 1]` on the
//! `T`-point grid (row = duration - 1, column = start).

mod config;
mod network;
mod sample;
mod schedule;

pub use config::{cell_interval, cell_valid, valid_mask, ModelConfig};
pub use network::{Dcan, ForwardOutput, ForwardVars, Mptc};
pub use sample::{group_sample, SamplingPlan, Tap};
pub use schedule::{BlockKind, DilationSchedule};
