use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Kind of layer owning the tensor, e.g. `conv1d` or `norm`.
    pub layer: String,
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S: Scalar = f64> {
    infos: Vec<ParamInfo>,
    tensors: Vec<Tensor<S>>,
}

pub const CHECKPOINT_FORMAT: &str = "dcan-checkpoint-v1";
const PARAMS_FILE: &str = "params.bin";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    params: Vec<ParamInfo>,
    #[serde(default)]
    extra: serde_json::Value,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            infos: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, layer: &str, tensor: Tensor<S>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.infos.push(ParamInfo {
            name,
            shape: tensor.shape().to_vec(),
            layer: layer.to_owned(),
        });
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn info(&self, id: ParamId) -> &ParamInfo {
        &self.infos[id.0]
    }

    pub fn infos(&self) -> &[ParamInfo] {
        &self.infos
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.infos.iter().position(|i| i.name == name).map(ParamId)
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Sum of squares over every parameter.
    pub fn l2(&self) -> S {
        self.tensors.iter().map(Tensor::sum_squares).sum()
    }

    /// Records every parameter as a trainable leaf of `graph`.
    pub fn bind<'g>(&self, graph: &'g Graph<S>) -> Bound<'g, S> {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| graph.param(t.clone()))
                .collect(),
        }
    }

    /// Records every parameter as a constant (inference).
    pub fn bind_frozen<'g>(&self, graph: &'g Graph<S>) -> Bound<'g, S> {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| graph.constant(t.clone()))
                .collect(),
        }
    }

    /// SHA-256 over names, shapes and the little-endian `f64` payload.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (info, t) in self.infos.iter().zip(&self.tensors) {
            h.update(info.name.as_bytes());
            for &d in &info.shape {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_f64c().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Writes `params.bin` (tensors in order) and `manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>, extra: &serde_json::Value) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(PARAMS_FILE))?);
        for t in &self.tensors {
            t.write_to(&mut w)?;
        }
        w.flush()?;
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.to_owned(),
            params: self.infos.clone(),
            extra: extra.clone(),
        };
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    /// Reads a checkpoint written by [`ParamStore::save`]; returns the store
    /// and the manifest's `extra` payload.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let dir = dir.as_ref();
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "unknown checkpoint format {}",
                manifest.format
            )));
        }
        let mut r = BufReader::new(File::open(dir.join(PARAMS_FILE))?);
        let mut store = Self::new();
        for info in manifest.params {
            let t = Tensor::<S>::read_from(&mut r)?;
            if t.shape() != info.shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {} stored with shape {:?}, manifest says {:?}",
                    info.name,
                    t.shape(),
                    info.shape
                )));
            }
            store.infos.push(info);
            store.tensors.push(t.with_requires_grad(true));
        }
        Ok((store, manifest.extra))
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn assign_from(&mut self, other: &ParamStore<S>) -> Result<()> {
        if self.infos.len() != other.infos.len() {
            return Err(Error::dim(format!(
                "checkpoint has {} parameters, model expects {}",
                other.infos.len(),
                self.infos.len()
            )));
        }
        for (mine, theirs) in self.infos.iter().zip(&other.infos) {
            if mine.name != theirs.name || mine.shape != theirs.shape {
                return Err(Error::dim(format!(
                    "checkpoint parameter {} {:?} does not match model parameter {} {:?}",
                    theirs.name, theirs.shape, mine.name, mine.shape
                )));
            }
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }
}

/// Parameters recorded on one graph.
pub struct Bound<'g, S: Scalar = f64> {
    vars: Vec<Var<'g, S>>,
}

impl<'g, S: Scalar> Bound<'g, S> {
    /// Wraps vars recorded in [`ParamStore`] order.
    pub fn from_vars(vars: Vec<Var<'g, S>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'g, S> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'g, S>] {
        &self.vars
    }

    /// `sum over parameters of ||theta||^2`.
    pub fn l2(&self) -> Result<Var<'g, S>> {
        let parts: Vec<_> = self.vars.iter().map(|v| v.sum_squares()).collect();
        crate::tensor::sum_all(&parts)
    }

    /// Leaf gradients after backward; zeros where nothing flowed.
    pub fn grads(&self) -> Vec<Vec<S>> {
        self.vars
            .iter()
            .map(|v| match v.grad() {
                Some(g) => g.into_data(),
                None => vec![S::zero(); v.value().numel()],
            })
            .collect()
    }
}

/// Uniform fan-in scaled initialization, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn he_uniform<S: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<S> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| S::lit(rng.gen_range(-bound..bound)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he_uniform_is_deterministic_and_centered() {
        let a: Tensor<f64> = he_uniform(&[100, 100], 27, &mut ChaCha8Rng::seed_from_u64(1));
        let b: Tensor<f64> = he_uniform(&[100, 100], 27, &mut ChaCha8Rng::seed_from_u64(1));
        let c: Tensor<f64> = he_uniform(&[100, 100], 27, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        assert_ne!(a, c);
        let n = a.numel() as f64;
        let mean = a.data().iter().sum::<f64>() / n;
        // Uniform(-b, b) has std b / sqrt(3).
        let bound = (6.0f64 / 27.0).sqrt();
        let sigma_of_mean = bound / 3f64.sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * sigma_of_mean, "mean {mean}");
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::<f64>::new();
        store.add(
            "a.weight",
            "conv1d",
            Tensor::from_fn([2, 3], |i| i as f64 * 0.5),
        );
        store.add("a.bias", "conv1d", Tensor::from_fn([2], |i| -(i as f64)));
        let extra = serde_json::json!({"k": 1});
        store.save(dir.path(), &extra).unwrap();
        let (back, ex) = ParamStore::<f64>::load(dir.path()).unwrap();
        assert_eq!(back, store);
        assert_eq!(ex, extra);
        assert_eq!(back.fingerprint(), store.fingerprint());
    }

    #[test]
    fn assign_rejects_mismatched_shapes() {
        let mut a = ParamStore::<f64>::new();
        a.add("w", "conv1d", Tensor::zeros([2]));
        let mut b = ParamStore::<f64>::new();
        b.add("w", "conv1d", Tensor::zeros([3]));
        assert!(matches!(a.assign_from(&b), Err(Error::Dimension(_))));
    }
}
