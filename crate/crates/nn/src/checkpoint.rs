//! Binary parameter snapshots.
//!
//! Layout (little endian): magic `PRSDCKPT`, `u32` version, `u32` count, then per
//! parameter a `u32` name length, UTF-8 name, `u32` rank, `u32` dims and `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::params::ParameterStore;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"PRSDCKPT";
const VERSION: u32 = 1;

/// One stored array.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn to_writer<T: Scalar>(store: &ParameterStore<T>, w: impl Write) -> Result<()> {
    to_writer_filtered(store, w, |_| true)
}

/// Writes only the parameters whose names satisfy `keep`.
pub fn to_writer_filtered<T: Scalar>(
    store: &ParameterStore<T>,
    mut w: impl Write,
    keep: impl Fn(&str) -> bool,
) -> Result<()> {
    let count = store.iter().filter(|(_, p)| keep(&p.name)).count();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(count as u32).to_le_bytes())?;
    for (_, p) in store.iter().filter(|(_, p)| keep(&p.name)) {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &x in p.value.data() {
            w.write_all(&(x.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save<T: Scalar>(store: &ParameterStore<T>, path: impl AsRef<Path>) -> Result<()> {
    to_writer(store, BufWriter::new(File::create(path)?))
}

/// Serialized bytes of the parameters under `prefix`.
pub fn prefix_bytes<T: Scalar>(store: &ParameterStore<T>, prefix: &str) -> Vec<u8> {
    let mut out = Vec::new();
    to_writer_filtered(store, &mut out, |name| name.starts_with(prefix)).expect("writing to memory");
    out
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| NnError::Checkpoint(format!("truncated file: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn from_reader(mut r: impl Read) -> Result<Vec<Entry>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| NnError::Checkpoint("file too short for a header".into()))?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| NnError::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 4 {
            return Err(NnError::Checkpoint(format!("`{name}` has rank {rank}")));
        }
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|e| NnError::Checkpoint(format!("truncated values for `{name}`: {e}")))?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(Entry { name, shape, values });
    }
    Ok(entries)
}

pub fn read(path: impl AsRef<Path>) -> Result<Vec<Entry>> {
    from_reader(BufReader::new(File::open(path)?))
}

fn assign<T: Scalar>(store: &mut ParameterStore<T>, entry: &Entry) -> Result<()> {
    let id = store.id(&entry.name)?;
    let p = store.get_mut(id);
    if p.value.shape() != entry.shape.as_slice() {
        return Err(NnError::Checkpoint(format!(
            "`{}` has shape {:?} in the checkpoint but {:?} in the model",
            entry.name,
            entry.shape,
            p.value.shape()
        )));
    }
    for (dst, &src) in p.value.data_mut().iter_mut().zip(&entry.values) {
        *dst = T::of(src as f64);
    }
    Ok(())
}

/// Replaces every parameter; names and shapes must match the store exactly.
pub fn load_entries<T: Scalar>(store: &mut ParameterStore<T>, entries: &[Entry]) -> Result<()> {
    if entries.len() != store.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint holds {} parameters, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for e in entries {
        if store.id(&e.name).is_err() {
            return Err(NnError::Checkpoint(format!("unexpected parameter `{}`", e.name)));
        }
    }
    entries.iter().try_for_each(|e| assign(store, e))
}

pub fn load<T: Scalar>(store: &mut ParameterStore<T>, path: impl AsRef<Path>) -> Result<()> {
    load_entries(store, &read(path)?)
}

/// Copies the parameters whose names start with `prefix`; each must be present
/// in the checkpoint. Returns how many were loaded.
pub fn load_prefix<T: Scalar>(store: &mut ParameterStore<T>, path: impl AsRef<Path>, prefix: &str) -> Result<usize> {
    let entries = read(path)?;
    let wanted: Vec<String> = store
        .iter()
        .filter(|(_, p)| p.name.starts_with(prefix))
        .map(|(_, p)| p.name.clone())
        .collect();
    for name in &wanted {
        let entry = entries
            .iter()
            .find(|e| &e.name == name)
            .ok_or_else(|| NnError::Checkpoint(format!("checkpoint lacks `{name}`")))?;
        assign(store, entry)?;
    }
    Ok(wanted.len())
}
