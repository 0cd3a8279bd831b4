//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of every gradient rule it checks.

use super::{Graph, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradEntry {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradEntry {
    pub fn within(&self, cfg: GradCheck) -> bool {
        let diff = (self.analytic - self.numeric).abs();
        let scale = self.analytic.abs().max(self.numeric.abs());
        diff <= cfg.abs_tol || diff <= cfg.rel_tol * scale
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
}

impl GradReport {
    pub fn passes(&self, cfg: GradCheck) -> bool {
        self.entries.iter().all(|e| e.within(cfg))
    }

    pub fn failures(&self, cfg: GradCheck) -> Vec<&GradEntry> {
        self.entries.iter().filter(|e| !e.within(cfg)).collect()
    }

    /// Largest relative error among entries that exceed the absolute floor.
    pub fn worst_relative(&self, cfg: GradCheck) -> f64 {
        self.entries
            .iter()
            .filter(|e| (e.analytic - e.numeric).abs() > cfg.abs_tol)
            .map(|e| (e.analytic - e.numeric).abs() / e.analytic.abs().max(e.numeric.abs()))
            .fold(0.0, f64::max)
    }

    #[track_caller]
    pub fn assert_ok(&self, cfg: GradCheck) {
        let bad = self.failures(cfg);
        assert!(
            bad.is_empty(),
            "{} gradient mismatches, first: {:?}",
            bad.len(),
            &bad[..bad.len().min(5)]
        );
    }
}

/// Checks every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let all: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |k| (i, k)))
        .collect();
    check_gradients_at(inputs, &all, GradCheck::default().step, f)
}

/// Checks only the listed `(input, element)` coordinates.
pub fn check_gradients_at<F>(
    inputs: &[Tensor<f64>],
    coords: &[(usize, usize)],
    step: f64,
    f: F,
) -> Result<GradReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let analytic: Vec<Tensor<f64>> = {
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&g, &vars)?;
        loss.backward()?;
        vars.iter()
            .zip(inputs)
            .map(|(v, t)| {
                v.grad()
                    .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
            })
            .collect()
    };
    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<_> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars)?.value().item();
        out
    };
    let mut work = inputs.to_vec();
    let mut entries = Vec::with_capacity(coords.len());
    for &(input, index) in coords {
        let orig = work[input].data()[index];
        work[input].data_mut()[index] = orig + step;
        let plus = eval(&work)?;
        work[input].data_mut()[index] = orig - step;
        let minus = eval(&work)?;
        work[input].data_mut()[index] = orig;
        entries.push(GradEntry {
            input,
            index,
            analytic: analytic[input].data()[index],
            numeric: (plus - minus) / (2.0 * step),
        });
    }
    Ok(GradReport { entries })
}
