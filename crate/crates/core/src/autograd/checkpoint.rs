//! Flat binary container for named f32 tensors. The byte layout is
//! fixed and little-endian, and entries keep the order they were given,
//! so identical inputs produce identical files.

use super::store::ParamStore;
use super::tensor::Tensor;
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"TNS1";
const MAX_NAME_LEN: u32 = 1 << 16;
const MAX_RANK: u32 = 8;
const MAX_ELEMENTS: u64 = 1 << 31;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// All parameters of a store as named entries, in registration order.
pub fn entries_of(store: &ParamStore<f32>) -> Vec<(String, Tensor<f32>)> {
    store.iter().map(|(_, name, value)| (name.to_string(), value.clone())).collect()
}

pub fn save_tensors(
    path: &Path,
    entries: &[(String, Tensor<f32>)],
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &e in tensor.shape() {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for &x in tensor.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<BTreeMap<String, Tensor<f32>>, CheckpointError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != 1 {
        return Err(CheckpointError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)?;
        if name_len > MAX_NAME_LEN {
            return Err(CheckpointError::Format(format!("name length {name_len}")));
        }
        let mut name_bytes = vec![0u8; name_len as usize];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Format("name is not utf-8".into()))?;
        let rank = read_u32(&mut r)?;
        if rank > MAX_RANK {
            return Err(CheckpointError::Format(format!("rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut elements: u64 = 1;
        for _ in 0..rank {
            let e = read_u32(&mut r)?;
            elements = elements.saturating_mul(e as u64);
            shape.push(e as usize);
        }
        if elements > MAX_ELEMENTS {
            return Err(CheckpointError::Format(format!("{elements} elements")));
        }
        let mut data = Vec::with_capacity(elements as usize);
        let mut buf = [0u8; 4];
        for _ in 0..elements {
            r.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf));
        }
        if out.insert(name.clone(), Tensor::new(shape, data)).is_some() {
            return Err(CheckpointError::Format(format!("duplicate tensor {name:?}")));
        }
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
