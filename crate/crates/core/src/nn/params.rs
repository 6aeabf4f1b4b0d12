//! Named parameters, gradients, Adam and the checkpoint file.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_FORMAT: &str = "mtcil-params";

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Parameters by name with their Adam moments. Iteration is in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a parameter; its moments start at zero.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let n = value.len();
        self.slots.insert(
            name.into(),
            Slot {
                value,
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.slots
            .get(name)
            .map(|s| &s.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    /// Number of Adam updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update with the default betas and epsilon.
    /// Parameters missing from `grads` are treated as having zero gradient.
    /// Nothing is modified if any gradient is non-finite.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        for (name, g) in &grads.0 {
            let slot = self.slots.get(name).ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if g.shape() != slot.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: slot.value.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (name, slot) in &mut self.slots {
            let g = grads.0.get(name).map(Tensor::data);
            let Slot { value, m, v } = slot;
            for (k, p) in value.data_mut().iter_mut().enumerate() {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gk;
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gk * gk;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            adam_step: self.step,
            params: self
                .slots
                .iter()
                .map(|(name, s)| CheckpointEntry {
                    name: name.clone(),
                    shape: s.value.shape().to_vec(),
                    data: encode_f64(s.value.data()),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format tag `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::SchemaVersion {
                found: ck.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut store = ParamStore::new();
        for e in &ck.params {
            let data = decode_f64(&e.data).map_err(|m| Error::Checkpoint(format!("`{}`: {m}", e.name)))?;
            let t = Tensor::new(e.shape.clone(), data)
                .map_err(|_| Error::Checkpoint(format!("`{}`: payload does not match shape {:?}", e.name, e.shape)))?;
            if !t.all_finite() {
                return Err(Error::Checkpoint(format!("`{}` holds non-finite values", e.name)));
            }
            store.insert(e.name.clone(), t);
        }
        store.step = ck.adam_step;
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(&ck)
    }
}

/// Serialized parameters: one entry per tensor with its shape and the
/// little-endian `f64` payload in base64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub adam_step: u64,
    pub params: Vec<CheckpointEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

pub fn encode_f64(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub fn decode_f64(s: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = B64.decode(s).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!("payload of {} bytes is not a whole number of f64", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Gradients by parameter name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients(BTreeMap<String, Tensor>);

impl Gradients {
    /// Zero gradient for every parameter of `store`.
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self(store.iter().map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape()))).collect())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn accumulate(&mut self, name: &str, g: &[f64]) -> Result<()> {
        let t = self.0.get_mut(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if t.len() != g.len() {
            return Err(Error::ShapeMismatch {
                op: "accumulate",
                left: t.shape().to_vec(),
                right: vec![g.len()],
            });
        }
        for (a, b) in t.data_mut().iter_mut().zip(g) {
            *a += b;
        }
        Ok(())
    }

    /// Adds `other` elementwise (for summing per-shard gradients).
    pub fn add(&mut self, other: &Gradients) -> Result<()> {
        for (name, g) in &other.0 {
            match self.0.get(name) {
                Some(_) => self.accumulate(name, g.data())?,
                None => {
                    self.0.insert(name.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.values().flat_map(|t| t.data()).fold(0.0, |m, v| m.max(v.abs()))
    }
}
