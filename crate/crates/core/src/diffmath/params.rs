use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Rng, Tensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Named collection of learnable tensors.
///
/// Names are stable checkpoint keys (`enc.gcn_q.w0`, `eng.w_t`, ...); shapes
/// are immutable after construction. The map is ordered so that optimizer
/// updates and serialized output are deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
    frozen: BTreeMap<String, bool>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(
            !self.tensors.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.tensors.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    /// Replace the value of an existing parameter; the shape must match.
    pub fn set(&mut self, name: &str, t: Tensor) {
        let old = self
            .tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(old.shape(), t.shape(), "shape change for {name}");
        self.tensors.insert(name.to_string(), t);
    }

    /// Mark a parameter as non-trainable (optimizers skip it).
    pub fn freeze(&mut self, name: &str) {
        assert!(self.tensors.contains_key(name), "unknown parameter {name}");
        self.frozen.insert(name.to_string(), true);
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        !self.frozen.get(name).copied().unwrap_or(false)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar elements.
    pub fn element_count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Absorb every entry of `other` (names must not collide).
    pub fn merge(&mut self, other: ParamSet) {
        for (name, t) in other.tensors {
            assert!(
                !self.tensors.contains_key(&name),
                "duplicate parameter name {name}"
            );
            self.tensors.insert(name.clone(), t);
        }
        for (name, f) in other.frozen {
            self.frozen.insert(name, f);
        }
    }
}

/// Gradients keyed the same way as a [`ParamSet`].
#[derive(Clone, Debug, Default)]
pub struct GradSet {
    grads: BTreeMap<String, Tensor>,
}

impl GradSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, t: Tensor) {
        self.grads.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// `self += other * scale`, allocating slots as needed. Accumulation is in
    /// key order, so batch reductions are deterministic.
    pub fn add_scaled(&mut self, other: &GradSet, scale: f64) {
        for (name, g) in other.grads.iter() {
            match self.grads.get_mut(name) {
                Some(acc) => {
                    let mut data = acc.data().to_vec();
                    for (a, b) in data.iter_mut().zip(g.data()) {
                        *a += b * scale;
                    }
                    *acc = Tensor::new(acc.shape().to_vec(), data);
                }
                None => {
                    let data: Vec<f64> = g.data().iter().map(|v| v * scale).collect();
                    self.grads
                        .insert(name.clone(), Tensor::new(g.shape().to_vec(), data));
                }
            }
        }
    }

    /// Global L2 norm over all entries.
    pub fn l2_norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.grads.values_mut() {
            let data: Vec<f64> = t.data().iter().map(|v| v * s).collect();
            *t = Tensor::new(t.shape().to_vec(), data);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(|t| t.is_finite())
    }
}

/// Glorot-uniform initialization for matrices (bound `sqrt(6/(fan_in+fan_out))`
/// from the leading two dimensions), zeros for rank-1 tensors (biases).
/// Deterministic per seed; iteration over `spec` is in the given order.
pub fn init_params(spec: &[(String, Vec<usize>)], seed: u64) -> ParamSet {
    let mut rng = Rng::new(seed);
    let mut out = ParamSet::new();
    for (name, shape) in spec {
        let t = if shape.len() >= 2 {
            let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            let len: usize = shape.iter().product();
            let data: Vec<f64> = (0..len).map(|_| rng.uniform_in(-bound, bound)).collect();
            Tensor::new(shape.clone(), data)
        } else {
            Tensor::zeros(shape.clone())
        };
        out.insert(name, t);
    }
    out
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    data_b64: String,
}

/// On-disk checkpoint: format version, free-form hyperparameters, and all
/// tensors as base64 of little-endian 64-bit floats (bit-exact round-trip).
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub hyperparameters: serde_json::Value,
    tensors: BTreeMap<String, TensorRecord>,
    #[serde(default)]
    frozen: Vec<String>,
}

impl Checkpoint {
    pub fn from_params(params: &ParamSet, hyperparameters: serde_json::Value) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, t) in params.iter() {
            let mut bytes = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            tensors.insert(
                name.to_string(),
                TensorRecord {
                    shape: t.shape().to_vec(),
                    data_b64: B64.encode(&bytes),
                },
            );
        }
        let frozen = params
            .names()
            .filter(|n| !params.is_trainable(n))
            .map(|n| n.to_string())
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            hyperparameters,
            tensors,
            frozen,
        }
    }

    pub fn into_params(self) -> Result<ParamSet, CheckpointError> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(self.format_version));
        }
        let mut params = ParamSet::new();
        for (name, rec) in self.tensors {
            let bytes = B64
                .decode(rec.data_b64.as_bytes())
                .map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
            if bytes.len() % 8 != 0 {
                return Err(CheckpointError::Malformed(format!(
                    "{name}: byte length not a multiple of 8"
                )));
            }
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let want: usize = rec.shape.iter().product();
            if data.len() != want {
                return Err(CheckpointError::Malformed(format!(
                    "{name}: {} values for shape {:?}",
                    data.len(),
                    rec.shape
                )));
            }
            params.insert(&name, Tensor::new(rec.shape, data));
        }
        for name in self.frozen {
            if params.contains(&name) {
                params.freeze(&name);
            }
        }
        Ok(params)
    }

    /// Tensor shapes only, for structural comparisons.
    pub fn tensor_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.tensors
            .iter()
            .map(|(k, v)| (k.clone(), v.shape.clone()))
            .collect()
    }
}

/// Write a checkpoint atomically (temp file + rename).
pub fn save_checkpoint(
    path: &Path,
    params: &ParamSet,
    hyperparameters: serde_json::Value,
) -> Result<(), CheckpointError> {
    let ckpt = Checkpoint::from_params(params, hyperparameters);
    let json = serde_json::to_string(&ckpt).expect("checkpoint serialization cannot fail");
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(json.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamSet, serde_json::Value), CheckpointError> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let hp = ckpt.hyperparameters.clone();
    Ok((ckpt.into_params()?, hp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> Vec<(String, Vec<usize>)> {
        vec![
            ("w".into(), vec![200, 200]),
            ("b".into(), vec![200]),
            ("v".into(), vec![8, 1]),
        ]
    }

    #[test]
    fn same_seed_bit_identical() {
        let a = init_params(&spec(), 5);
        let b = init_params(&spec(), 5);
        for (name, t) in a.iter() {
            assert_eq!(t.data(), b.get(name).data());
        }
    }

    #[test]
    fn biases_zero_matrices_bounded() {
        let p = init_params(&spec(), 9);
        assert!(p.get("b").data().iter().all(|&v| v == 0.0));
        let bound = (6.0f64 / 400.0).sqrt();
        assert!(p.get("w").data().iter().all(|&v| v.abs() <= bound));
        // Rank-2 column vectors are weights, not biases.
        assert!(p.get("v").data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let p = init_params(&spec(), 17);
        let dir = std::env::temp_dir().join(format!("hamforge-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.ckpt");
        save_checkpoint(&path, &p, serde_json::json!({"d_f": 32})).unwrap();
        let (q, hp) = load_checkpoint(&path).unwrap();
        assert_eq!(hp["d_f"], 32);
        for (name, t) in p.iter() {
            let u = q.get(name);
            assert_eq!(t.shape(), u.shape());
            for (a, b) in t.data().iter().zip(u.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn frozen_flag_survives_roundtrip() {
        let mut p = init_params(&spec(), 3);
        p.freeze("w");
        let dir = std::env::temp_dir().join(format!("hamforge-ckpt-f-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.ckpt");
        save_checkpoint(&path, &p, serde_json::Value::Null).unwrap();
        let (q, _) = load_checkpoint(&path).unwrap();
        assert!(!q.is_trainable("w"));
        assert!(q.is_trainable("b"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
