//! Binary checkpoint container.
//!
//! A checkpoint is a flat map from parameter names to tensors, stored as:
//!
//! ```text
//! magic  b"SMCK"
//! u32    format version (currently 1)
//! u64    entry count
//! entry* sorted by name:
//!   u32      name length, then that many UTF-8 bytes
//!   u32      rank, then rank x u64 dimensions
//!   f64*     row-major values
//! ```
//!
//! All integers and floats are little-endian. Values round-trip bit-exactly,
//! so re-saving a loaded checkpoint reproduces the file byte for byte --
//! the reproducibility tests lean on that.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::params::ParamStore;
use super::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SMCK";
const VERSION: u32 = 1;

/// Writes `(name, tensor)` entries to `path`, sorted by name.
pub fn save_entries(path: &Path, entries: &[(&str, &Tensor)]) -> Result<()> {
    let mut sorted: Vec<&(&str, &Tensor)> = entries.iter().collect();
    sorted.sort_by_key(|(name, _)| *name);
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::Checkpoint(format!("duplicate entry name {:?}", w[0].0)));
        }
    }

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(sorted.len() as u64).to_le_bytes())?;
    for (name, t) in sorted {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads every entry of a checkpoint file.
pub fn load_entries(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut input = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}, not a checkpoint file")));
    }
    let version = read_u32(&mut input, "version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = read_u64(&mut input, "entry count")?;

    let mut entries = Vec::with_capacity(count as usize);
    for i in 0..count {
        let name_len = read_u32(&mut input, "name length")? as usize;
        if name_len > 4096 {
            return Err(Error::Checkpoint(format!("entry {i}: implausible name length {name_len}")));
        }
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut input, &mut name_bytes, "name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint(format!("entry {i}: name is not UTF-8")))?;

        let rank = read_u32(&mut input, "rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Checkpoint(format!("entry {name:?}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let d = read_u64(&mut input, "dimension")?;
            numel = numel.saturating_mul(d);
            shape.push(d as usize);
        }
        if numel == 0 || numel > (1 << 32) {
            return Err(Error::Checkpoint(format!("entry {name:?}: implausible size {numel}")));
        }
        let mut data = Vec::with_capacity(numel as usize);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            read_exact(&mut input, &mut buf, "tensor data")?;
            data.push(f64::from_le_bytes(buf));
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("entry {name:?}: {e}")))?;
        entries.push((name, tensor));
    }

    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after the last entry".into()));
    }
    Ok(entries)
}

/// Saves a whole parameter store.
pub fn save_store(path: &Path, store: &ParamStore) -> Result<()> {
    let entries: Vec<(&str, &Tensor)> = store.iter().collect();
    save_entries(path, &entries)
}

/// Loads a checkpoint into an existing store.
///
/// The file must contain exactly the store's parameter names with matching
/// shapes; anything else is an architecture mismatch and errors out rather
/// than silently partially loading.
pub fn load_into_store(path: &Path, store: &mut ParamStore) -> Result<()> {
    let entries = load_entries(path)?;
    if entries.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} entries, model has {} parameters",
            entries.len(),
            store.len()
        )));
    }
    for (name, tensor) in entries {
        let id = store
            .lookup(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name:?}")))?;
        store
            .set(id, tensor)
            .map_err(|_| Error::Checkpoint(format!("shape mismatch for {name:?}")))?;
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, what)?;
    Ok(u64::from_le_bytes(buf))
}
