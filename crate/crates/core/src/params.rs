//! Named trainable tensors, their optimizer state, and the checkpoint container.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Handle to one tensor in a [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Weight matrices take L2 decay; biases and embedding tables do not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Embedding,
}

#[derive(Clone, Debug)]
pub(crate) struct Entry<T> {
    pub(crate) kind: ParamKind,
    pub(crate) value: Tensor<T>,
    pub(crate) m: Vec<T>,
    pub(crate) v: Vec<T>,
    pub(crate) step: u64,
    pub(crate) trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParameterSet<T> {
    entries: IndexMap<String, Entry<T>>,
}

impl<T: Real> ParameterSet<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let n = value.len();
        let (idx, _) = self.entries.insert_full(
            name,
            Entry {
                kind,
                value,
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
                step: 0,
                trainable: true,
            },
        );
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).map(|(k, _)| k.as_str()).expect("valid ParamId")
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entry(id).value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entry_mut(id).value
    }

    /// Replaces the values of a tensor; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let e = self.entry_mut(id);
        if e.value.shape() != value.shape() {
            return Err(Error::dim(format!(
                "cannot change parameter shape {} to {}",
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entry(id).kind
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entry(id).trainable
    }

    /// Frozen tensors still receive gradients but are skipped by the optimizer.
    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entry_mut(id).trainable = trainable;
    }

    pub fn step(&self, id: ParamId) -> u64 {
        self.entry(id).step
    }

    /// Total number of scalars across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (k, e))| (ParamId(i), k.as_str(), &e.value))
    }

    pub(crate) fn entry(&self, id: ParamId) -> &Entry<T> {
        &self.entries[id.0]
    }

    pub(crate) fn entry_mut(&mut self, id: ParamId) -> &mut Entry<T> {
        &mut self.entries[id.0]
    }

    /// Converts every tensor to another precision. Optimizer state is reset.
    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        let mut out = ParameterSet::new();
        for (name, e) in &self.entries {
            let id = out
                .add(name.clone(), e.kind, e.value.cast())
                .expect("names already unique");
            out.set_trainable(id, e.trainable);
        }
        out
    }

    /// Writes the checkpoint container (see [`write_checkpoint`]).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let records: Vec<CheckpointRecord> = self
            .iter()
            .map(|(_, name, t)| CheckpointRecord {
                name: name.to_string(),
                shape: t.shape(),
                data: t.data().iter().map(|v| v.to_f64c() as f32).collect(),
            })
            .collect();
        let mut w = BufWriter::new(File::create(path)?);
        write_checkpoint(&mut w, &records)?;
        w.flush()?;
        Ok(())
    }

    /// Loads values by name into an already-constructed set. Every tensor
    /// must be present with a matching shape.
    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let mut r = BufReader::new(File::open(path)?);
        let records = read_checkpoint(&mut r)?;
        if records.len() != self.len() {
            return Err(Error::Input(format!(
                "checkpoint has {} tensors, model expects {}",
                records.len(),
                self.len()
            )));
        }
        for rec in records {
            let id = self
                .id(&rec.name)
                .ok_or_else(|| Error::Input(format!("unexpected tensor `{}` in checkpoint", rec.name)))?;
            let data = rec.data.iter().map(|&v| T::from_f64c(v as f64)).collect();
            self.set(id, Tensor::new(rec.shape, data)?)?;
        }
        Ok(())
    }
}

/// Accumulated gradients, one optional tensor per parameter.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &ParameterSet<T>) -> Self {
        Self {
            grads: vec![None; params.len()],
        }
    }

    pub(crate) fn from_vec(grads: Vec<Option<Tensor<T>>>) -> Self {
        Self { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor<T>) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0] = Some(grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Adds `other` into `self`, elementwise per parameter.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            let Some(theirs) = theirs else { continue };
            match mine {
                Some(m) => {
                    for (a, &b) in m.data_mut().iter_mut().zip(theirs.data()) {
                        *a += b;
                    }
                }
                None => *mine = Some(theirs.clone()),
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }

    pub fn norm_sq(&self) -> T {
        self.grads.iter().flatten().map(|g| g.norm_sq()).sum()
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"NSECKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRecord {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<f32>,
}

/// Checkpoint layout, all integers little-endian:
///
/// ```text
/// magic    8 bytes  "NSECKPT\0"
/// version  u32      1
/// count    u32      number of records
/// record*  name_len u32, name (UTF-8), ndim u8 (1|2), dims u32 x ndim,
///          data f32 x numel
/// ```
pub fn write_checkpoint<W: Write>(w: &mut W, records: &[CheckpointRecord]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for r in records {
        if r.data.len() != r.shape.numel() {
            return Err(Error::dim(format!("record `{}` data does not match shape {}", r.name, r.shape)));
        }
        let name = r.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        match r.shape {
            Shape::Vector(n) => {
                w.write_all(&[1u8])?;
                w.write_all(&(n as u32).to_le_bytes())?;
            }
            Shape::Matrix(a, b) => {
                w.write_all(&[2u8])?;
                w.write_all(&(a as u32).to_le_bytes())?;
                w.write_all(&(b as u32).to_le_bytes())?;
            }
        }
        for v in &r.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Vec<CheckpointRecord>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Input("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Input(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Input("checkpoint name is not UTF-8".into()))?;
        let mut ndim = [0u8; 1];
        r.read_exact(&mut ndim)?;
        let shape = match ndim[0] {
            1 => Shape::Vector(read_u32(r)? as usize),
            2 => {
                let a = read_u32(r)? as usize;
                Shape::Matrix(a, read_u32(r)? as usize)
            }
            d => return Err(Error::Input(format!("tensor `{name}` has unsupported rank {d}"))),
        };
        let mut data = Vec::with_capacity(shape.numel());
        let mut buf = [0u8; 4];
        for _ in 0..shape.numel() {
            r.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf));
        }
        out.push(CheckpointRecord { name, shape, data });
    }
    Ok(out)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut p = ParameterSet::<f32>::new();
        p.add("w", ParamKind::Weight, Tensor::zeros(Shape::Vector(2))).unwrap();
        assert!(matches!(
            p.add("w", ParamKind::Weight, Tensor::zeros(Shape::Vector(2))),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn set_refuses_shape_change() {
        let mut p = ParameterSet::<f32>::new();
        let id = p.add("w", ParamKind::Weight, Tensor::zeros(Shape::Vector(2))).unwrap();
        assert!(p.set(id, Tensor::zeros(Shape::Vector(3))).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_value_exact() {
        let mut p = ParameterSet::<f32>::new();
        p.add(
            "a",
            ParamKind::Weight,
            Tensor::matrix(2, 3, vec![1.5, -0.0, 3.25e-7, f32::MAX, -2.0, 0.1]).unwrap(),
        )
        .unwrap();
        p.add("b", ParamKind::Bias, Tensor::vector(vec![0.3, -0.7])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        p.save(&path).unwrap();

        let mut q = p.clone();
        for id in q.ids().collect::<Vec<_>>() {
            let shape = q.get(id).shape();
            q.set(id, Tensor::zeros(shape)).unwrap();
        }
        q.load(&path).unwrap();
        for ((_, _, a), (_, _, b)) in p.iter().zip(q.iter()) {
            let bits_a: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn checkpoint_rejects_bad_magic() {
        let bytes = b"NOTACKPT\x01\x00\x00\x00\x00\x00\x00\x00".to_vec();
        assert!(read_checkpoint(&mut bytes.as_slice()).is_err());
    }
}
