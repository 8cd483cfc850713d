use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::checkpoint::{Checkpoint, CheckpointEntry, EntryKind};
use super::{read_checkpoint, write_checkpoint, Tensor};
use crate::error::{Error, Result};

/// Named trainable parameters plus non-trainable buffers, ordered by path.
#[derive(Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) {
        let value = if value.requires_grad() {
            value
        } else {
            Tensor::param(value.to_vec(), value.shape()).expect("finite tensor")
        };
        self.params.insert(path.into(), value);
    }

    pub fn insert_zeros(&mut self, path: &str, shape: &[usize]) {
        self.insert(path, Tensor::zeros(shape));
    }

    pub fn insert_full(&mut self, path: &str, shape: &[usize], value: f64) {
        self.insert(path, Tensor::full(shape, value));
    }

    /// He-normal initialization with the given fan-in.
    pub fn insert_he(&mut self, path: &str, shape: &[usize], fan_in: usize, rng: &mut impl Rng) {
        let std = (2.0 / fan_in as f64).sqrt();
        self.insert_normal(path, shape, std, rng);
    }

    pub fn insert_normal(&mut self, path: &str, shape: &[usize], std: f64, rng: &mut impl Rng) {
        let dist = Normal::new(0.0, std).expect("valid std");
        let data = (0..shape.iter().product::<usize>()).map(|_| dist.sample(rng)).collect();
        self.insert(path, Tensor::new(data, shape).expect("finite init"));
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.params
            .get(path)
            .ok_or_else(|| Error::MissingParam(path.to_string()))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    /// Replaces a parameter's values with a fresh leaf of the same shape.
    pub fn set_data(&mut self, path: &str, data: Vec<f64>) -> Result<()> {
        let old = self.get(path)?;
        let t = Tensor::param(data, old.shape())?;
        self.params.insert(path.to_string(), t);
        Ok(())
    }

    pub fn insert_buffer(&mut self, path: impl Into<String>, shape: &[usize], values: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.buffers.insert(path.into(), (shape.to_vec(), values));
    }

    pub fn buffer(&self, path: &str) -> Result<&[f64]> {
        self.buffers
            .get(path)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::MissingParam(path.to_string()))
    }

    pub fn set_buffer(&mut self, path: &str, values: Vec<f64>) -> Result<()> {
        let slot = self
            .buffers
            .get_mut(path)
            .ok_or_else(|| Error::MissingParam(path.to_string()))?;
        if slot.1.len() != values.len() {
            return Err(Error::shape("set_buffer", format!("size mismatch for {path}")));
        }
        slot.1 = values;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        for t in self.params.values() {
            t.zero_grad();
        }
    }

    /// Copies every entry of `other` into `self`, overwriting duplicates.
    pub fn extend(&mut self, other: &ParamStore) {
        for (k, v) in &other.params {
            self.params.insert(k.clone(), v.detach_as_param());
        }
        for (k, v) in &other.buffers {
            self.buffers.insert(k.clone(), v.clone());
        }
    }

    /// Entries whose path starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.detach_as_param()))
                .collect(),
            buffers: self
                .buffers
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut entries = BTreeMap::new();
        for (k, t) in &self.params {
            entries.insert(
                k.clone(),
                CheckpointEntry {
                    kind: EntryKind::Param,
                    shape: t.shape().to_vec(),
                    values: t.to_vec(),
                },
            );
        }
        for (k, (shape, values)) in &self.buffers {
            entries.insert(
                k.clone(),
                CheckpointEntry {
                    kind: EntryKind::Buffer,
                    shape: shape.clone(),
                    values: values.clone(),
                },
            );
        }
        Checkpoint { entries }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut store = ParamStore::new();
        for (k, e) in &ckpt.entries {
            match e.kind {
                EntryKind::Param => store.insert(k.clone(), Tensor::param(e.values.clone(), &e.shape)?),
                EntryKind::Buffer => store.insert_buffer(k.clone(), &e.shape, e.values.clone()),
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        write_checkpoint(&mut w, &self.to_checkpoint())?;
        std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&read_checkpoint(&mut BufReader::new(f))?)
    }
}

impl Tensor {
    fn detach_as_param(&self) -> Tensor {
        Tensor::param(self.to_vec(), self.shape()).expect("finite tensor")
    }
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.params.keys().collect::<Vec<_>>())
            .field("buffers", &self.buffers.keys().collect::<Vec<_>>())
            .finish()
    }
}
