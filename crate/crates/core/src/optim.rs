//! Adam with a piecewise-constant learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;

/// `(epochs, lr)` phases, applied in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule(pub Vec<(usize, f64)>);

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() || self.0.iter().any(|&(e, lr)| e == 0 || !(lr > 0.0)) {
            return Err(Error::config(format!("invalid lr schedule {:?}", self.0)));
        }
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        self.0.iter().map(|p| p.0).sum()
    }

    /// Learning rate of zero-based `epoch`; past the end the last phase holds.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut end = 0;
        for &(e, lr) in &self.0 {
            end += e;
            if epoch < end {
                return lr;
            }
        }
        self.0.last().map_or(0.0, |p| p.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: String,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: "adam".into(),
            schedule: LrSchedule(vec![(7, 1e-3), (3, 1e-4)]),
            batch_size: 16,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind != "adam" {
            return Err(Error::config(format!(
                "unsupported optimizer {:?}",
                self.kind
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.eps > 0.0) {
            return Err(Error::config(format!(
                "invalid Adam constants {:?}, {}",
                self.betas, self.eps
            )));
        }
        self.schedule.validate()
    }
}

#[derive(Clone, Debug)]
pub struct Adam<S: Scalar = f64> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: &ParamStore<S>, cfg: &OptimizerConfig) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| vec![S::zero(); t.numel()])
                .collect()
        };
        Self {
            beta1: cfg.betas.0,
            beta2: cfg.betas.1,
            eps: cfg.eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update with gradients in parameter order.
    pub fn update(&mut self, params: &mut ParamStore<S>, grads: &[Vec<S>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::dim(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let (one, eps) = (S::one(), S::lit(self.eps));
        let step_size = S::lit(lr / c1);
        let c2 = S::lit(c2);
        for (k, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let g = &grads[k];
            if g.len() != tensor.numel() {
                return Err(Error::dim(format!(
                    "gradient {k} has {} entries, expected {}",
                    g.len(),
                    tensor.numel()
                )));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in tensor.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                *w -= step_size * m[i] / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn schedule_switches_at_epoch_boundary() {
        let s: LrSchedule = serde_json::from_str("[[7, 0.001], [3, 0.0001]]").unwrap();
        assert_eq!(s.epochs(), 10);
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(6), 1e-3);
        assert_eq!(s.lr_at(7), 1e-4);
        assert_eq!(s.lr_at(9), 1e-4);
        assert!(LrSchedule(vec![]).validate().is_err());
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", "w", Tensor::vector(vec![1.0, -1.0]));
        let mut adam = Adam::new(&store, &OptimizerConfig::default());
        adam.update(&mut store, &[vec![0.5, -2.0]], 0.1).unwrap();
        let w = store.tensors()[0].data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", "w", Tensor::vector(vec![3.0, -2.0, 0.5]));
        let mut adam = Adam::new(&store, &OptimizerConfig::default());
        for _ in 0..2000 {
            let g: Vec<f64> = store.tensors()[0]
                .data()
                .iter()
                .map(|w| 2.0 * (w - 1.0))
                .collect();
            adam.update(&mut store, &[g], 0.01).unwrap();
        }
        assert!(store.tensors()[0]
            .data()
            .iter()
            .all(|w| (w - 1.0).abs() < 1e-3));
    }
}
