//! Named parameter storage and the checkpoint format.
//!
//! A checkpoint is a pair of files: `<stem>.bin` holds every tensor as
//! little-endian IEEE-754 values back to back, `<stem>.json` is the
//! manifest listing `name, dtype, shape, offset, byte_len` per tensor
//! plus the configuration echo and seed.

use std::collections::HashMap;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    /// Trainable weight.
    Param,
    /// Non-trainable state such as running statistics.
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

/// Declared tensor of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: EntryKind,
    pub init: Init,
}

impl ParamSpec {
    pub fn param(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), kind: EntryKind::Param, init }
    }

    pub fn buffer(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), kind: EntryKind::Buffer, init }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub kind: EntryKind,
    pub value: Tensor<T>,
    /// Adam first and second moments (params only, once training starts).
    pub moments: Option<(Tensor<T>, Tensor<T>)>,
}

/// Ordered named tensors of one network plus optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightStore<T> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, usize>,
    /// Number of optimizer updates applied.
    pub step: u64,
}

/// Stable 64-bit FNV-1a, so initialization does not depend on std's
/// randomized hasher.
struct Fnv(u64);

impl Hasher for Fnv {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }
}

fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h = Fnv(0xcbf29ce484222325);
    h.write(&seed.to_le_bytes());
    h.write(name.as_bytes());
    h.finish()
}

impl<T: Real> WeightStore<T> {
    /// Initialize every declared tensor. Each tensor draws from its own
    /// generator keyed by `(seed, name)`, so a tensor's initial value does
    /// not depend on which other tensors exist.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut entries = Vec::with_capacity(specs.len());
        for s in specs {
            let n: usize = s.shape.iter().product();
            let data = match s.init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::FanIn(fan_in) => {
                    let b = (6.0 / fan_in.max(1) as f64).sqrt();
                    let dist = Uniform::new(-b, b).expect("finite bound");
                    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &s.name));
                    (0..n).map(|_| T::from_f64(dist.sample(&mut rng))).collect()
                }
            };
            entries.push(Entry {
                name: s.name.clone(),
                kind: s.kind,
                value: Tensor::from_vec(&s.shape, data)?,
                moments: None,
            });
        }
        Self::from_entries(entries, 0)
    }

    pub fn from_entries(entries: Vec<Entry<T>>, step: u64) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (k, e) in entries.iter().enumerate() {
            if index.insert(e.name.clone(), k).is_some() {
                return Err(Error::Checkpoint { tensor: e.name.clone(), reason: "duplicate name".into() });
            }
        }
        Ok(Self { entries, index, step })
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Entry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|k| &self.entries[k].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(|k| &mut self.entries[k].value)
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == EntryKind::Param).map(|e| e.value.len()).sum()
    }

    /// Put every tensor on `tape`: params as leaves (or constants when
    /// `trainable` is false), buffers not at all.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        let vars = self
            .entries
            .iter()
            .map(|e| match e.kind {
                EntryKind::Param if trainable => Some(tape.leaf(e.value.clone())),
                EntryKind::Param => Some(tape.constant(e.value.clone())),
                EntryKind::Buffer => None,
            })
            .collect();
        Bound { vars }
    }

    /// Bind caller-made variables, one per parameter entry in entry order.
    pub fn bind_vars<'t>(&self, params: &[Var<'t, T>]) -> Result<Bound<'t, T>> {
        let mut it = params.iter();
        let mut vars = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            vars.push(match e.kind {
                EntryKind::Param => {
                    let v = *it.next().ok_or_else(|| Error::invalid("bind_vars", "too few variables"))?;
                    if v.shape() != e.value.shape() {
                        return Err(Error::ShapeMismatch { op: "bind_vars", left: e.value.shape().to_vec(), right: v.shape() });
                    }
                    Some(v)
                }
                EntryKind::Buffer => None,
            });
        }
        if it.next().is_some() {
            return Err(Error::invalid("bind_vars", "too many variables"));
        }
        Ok(Bound { vars })
    }

    /// Values of the parameter entries, in entry order.
    pub fn param_values(&self) -> Vec<Tensor<T>> {
        self.entries.iter().filter(|e| e.kind == EntryKind::Param).map(|e| e.value.clone()).collect()
    }

    /// Same tensors in another precision; optimizer moments are dropped.
    pub fn cast<U: Real>(&self) -> WeightStore<U> {
        WeightStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry { name: e.name.clone(), kind: e.kind, value: e.value.cast(), moments: None })
                .collect(),
            index: self.index.clone(),
            step: self.step,
        }
    }

    /// Check that the store holds exactly the declared tensors.
    pub fn check_layout(&self, specs: &[ParamSpec]) -> Result<()> {
        for s in specs {
            let Some(k) = self.position(&s.name) else {
                return Err(Error::Checkpoint { tensor: s.name.clone(), reason: "missing".into() });
            };
            let e = &self.entries[k];
            if e.value.shape() != s.shape.as_slice() || e.kind != s.kind {
                return Err(Error::Checkpoint {
                    tensor: s.name.clone(),
                    reason: format!("expected {:?} {:?}, found {:?} {:?}", s.kind, s.shape, e.kind, e.value.shape()),
                });
            }
        }
        if let Some(extra) = self.entries.iter().find(|e| !specs.iter().any(|s| s.name == e.name)) {
            return Err(Error::Checkpoint { tensor: extra.name.clone(), reason: "not part of this network".into() });
        }
        Ok(())
    }
}

/// Tape variables of a store, aligned with its entries.
pub struct Bound<'t, T> {
    vars: Vec<Option<Var<'t, T>>>,
}

impl<'t, T: Real> Bound<'t, T> {
    pub fn var(&self, k: usize) -> Option<Var<'t, T>> {
        self.vars[k]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub byte_len: usize,
}

/// JSON sidecar of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub dtype: String,
    pub seed: u64,
    pub step: u64,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

pub const CHECKPOINT_FORMAT: u32 = 1;

/// `<stem>.bin` and `<stem>.json` for a checkpoint path given with or
/// without either extension.
pub fn checkpoint_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".bin"), with(".json"))
}

fn push_tensor<T: Real>(name: String, t: &Tensor<T>, blob: &mut Vec<u8>, records: &mut Vec<TensorRecord>) {
    let offset = blob.len();
    for &v in t.data() {
        v.write_le(blob);
    }
    records.push(TensorRecord {
        name,
        dtype: T::DTYPE.to_string(),
        shape: t.shape().to_vec(),
        offset,
        byte_len: blob.len() - offset,
    });
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// Write the blob and manifest. Buffers and optimizer moments are
/// included; moments are stored as `adam.m.<name>` / `adam.v.<name>`.
pub fn save_checkpoint<T: Real>(store: &WeightStore<T>, path: &Path, config: &serde_json::Value, seed: u64) -> Result<()> {
    let (bin, json) = checkpoint_paths(path);
    let mut blob = Vec::new();
    let mut records = Vec::new();
    for e in &store.entries {
        push_tensor(e.name.clone(), &e.value, &mut blob, &mut records);
    }
    for e in &store.entries {
        if let Some((m, v)) = &e.moments {
            push_tensor(format!("{ADAM_M}{}", e.name), m, &mut blob, &mut records);
            push_tensor(format!("{ADAM_V}{}", e.name), v, &mut blob, &mut records);
        }
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT,
        dtype: T::DTYPE.to_string(),
        seed,
        step: store.step,
        config: config.clone(),
        tensors: records,
    };
    if let Some(dir) = bin.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(&bin, &blob).map_err(|e| Error::io(&bin, e))?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let (_, json) = checkpoint_paths(path);
    let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data { path: json, reason: e.to_string() })
}

/// Load a checkpoint written by [`save_checkpoint`] and verify it against
/// the declared layout.
pub fn load_checkpoint<T: Real>(path: &Path, specs: &[ParamSpec]) -> Result<(WeightStore<T>, Manifest)> {
    let (bin, _) = checkpoint_paths(path);
    let manifest = read_manifest(path)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Data { path: bin, reason: format!("unsupported checkpoint format {}", manifest.format) });
    }
    let blob = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut tensors: HashMap<&str, Tensor<T>> = HashMap::new();
    for r in &manifest.tensors {
        if r.dtype != T::DTYPE {
            return Err(Error::Checkpoint {
                tensor: r.name.clone(),
                reason: format!("stored as {} but {} requested", r.dtype, T::DTYPE),
            });
        }
        let n: usize = r.shape.iter().product();
        if r.byte_len != n * T::BYTES || r.offset.checked_add(r.byte_len).is_none_or(|end| end > blob.len()) {
            return Err(Error::Checkpoint { tensor: r.name.clone(), reason: "byte range is corrupt or truncated".into() });
        }
        let bytes = &blob[r.offset..r.offset + r.byte_len];
        let data = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
        tensors.insert(&r.name, Tensor::from_vec(&r.shape, data)?);
    }
    let mut entries = Vec::with_capacity(specs.len());
    for s in specs {
        let value = tensors.remove(s.name.as_str()).ok_or_else(|| Error::Checkpoint {
            tensor: s.name.clone(),
            reason: "missing from checkpoint".into(),
        })?;
        let moments = match (
            tensors.remove(format!("{ADAM_M}{}", s.name).as_str()),
            tensors.remove(format!("{ADAM_V}{}", s.name).as_str()),
        ) {
            (Some(m), Some(v)) => Some((m, v)),
            (None, None) => None,
            _ => {
                return Err(Error::Checkpoint { tensor: s.name.clone(), reason: "only one Adam moment stored".into() });
            }
        };
        entries.push(Entry { name: s.name.clone(), kind: s.kind, value, moments });
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint { tensor: extra.to_string(), reason: "not part of this network".into() });
    }
    let store = WeightStore::from_entries(entries, manifest.step)?;
    store.check_layout(specs)?;
    Ok((store, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        vec![
            ParamSpec::param("a.weight", &[2, 1, 3, 3], Init::FanIn(9)),
            ParamSpec::param("a.bias", &[2], Init::Zeros),
            ParamSpec::buffer("a.running_var", &[2], Init::Ones),
        ]
    }

    #[test]
    fn init_is_keyed_by_name() {
        let a = WeightStore::<f32>::init(&specs(), 5).unwrap();
        let b = WeightStore::<f32>::init(&specs()[..1], 5).unwrap();
        assert_eq!(a.get("a.weight"), b.get("a.weight"));
        let bound = (6.0f32 / 9.0).sqrt();
        assert!(a.get("a.weight").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert_ne!(a.get("a.weight"), WeightStore::<f32>::init(&specs(), 6).unwrap().get("a.weight"));
        assert_eq!(a.param_count(), 20);
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = WeightStore::<f32>::init(&specs(), 1).unwrap();
        store.entries_mut()[0].moments = Some((Tensor::full(&[2, 1, 3, 3], 0.25), Tensor::full(&[2, 1, 3, 3], 1e-7)));
        store.step = 17;
        let cfg = serde_json::json!({"base_channels": 8});
        let p1 = dir.path().join("one");
        save_checkpoint(&store, &p1, &cfg, 9).unwrap();
        let (loaded, manifest) = load_checkpoint::<f32>(&p1, &specs()).unwrap();
        assert_eq!(loaded, store);
        assert_eq!(manifest.seed, 9);
        let p2 = dir.path().join("two.bin");
        save_checkpoint(&loaded, &p2, &manifest.config, manifest.seed).unwrap();
        let read = |p: &Path| {
            let (b, j) = checkpoint_paths(p);
            (std::fs::read(b).unwrap(), std::fs::read(j).unwrap())
        };
        assert_eq!(read(&p1), read(&p2));
    }

    #[test]
    fn missing_tensor_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let store = WeightStore::<f64>::init(&specs()[..2], 1).unwrap();
        let p = dir.path().join("ck");
        save_checkpoint(&store, &p, &serde_json::Value::Null, 0).unwrap();
        let err = load_checkpoint::<f64>(&p, &specs()).unwrap_err();
        assert!(err.to_string().contains("a.running_var"), "{err}");
        let err = load_checkpoint::<f32>(&p, &specs()[..2]).unwrap_err();
        assert!(err.to_string().contains("f64"), "{err}");
    }

    #[test]
    fn truncated_blob_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = WeightStore::<f32>::init(&specs(), 1).unwrap();
        let p = dir.path().join("ck");
        save_checkpoint(&store, &p, &serde_json::Value::Null, 0).unwrap();
        let (bin, _) = checkpoint_paths(&p);
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        let err = load_checkpoint::<f32>(&p, &specs()).unwrap_err();
        assert!(err.to_string().contains("a.running_var"), "{err}");
    }
}
