//! Binary checkpoint format.
//!
//! ```text
//! "ILNET1"
//! repeated, ordered by name:
//!   u32 name_len | name bytes (UTF-8) | u32 rank | u32 dims[rank] | f32 payload[prod(dims)]
//! ```
//! All integers and floats are little-endian. The file ends after the last entry.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{ParamStore, Tensor};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 6] = b"ILNET1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not an ILNET1 checkpoint")]
    BadMagic,
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// Writes `entries` sorted by name. Names must be unique.
pub fn write_checkpoint<'a, T: Scalar, W: Write>(
    mut out: W,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
) -> Result<(), CheckpointError> {
    let sorted: BTreeMap<&str, &Tensor<T>> = entries.into_iter().collect();
    out.write_all(MAGIC)?;
    for (name, tensor) in sorted {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(tensor.rank() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in tensor.data() {
            let v = v.to_f32().ok_or_else(|| CheckpointError::Format(format!("`{name}` not representable as f32")))?;
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => CheckpointError::Format("truncated entry".into()),
        _ => e.into(),
    })?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<ParamStore<T>, CheckpointError> {
    let mut magic = [0u8; 6];
    input.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut store = ParamStore::new();
    loop {
        let mut first = [0u8; 1];
        if input.read(&mut first)? == 0 {
            break;
        }
        let mut rest = [0u8; 3];
        input.read_exact(&mut rest).map_err(|_| CheckpointError::Format("truncated name length".into()))?;
        let name_len = u32::from_le_bytes([first[0], rest[0], rest[1], rest[2]]) as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name).map_err(|_| CheckpointError::Format("truncated name".into()))?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Format("name is not UTF-8".into()))?;
        let rank = read_u32(&mut input)? as usize;
        let dims = (0..rank).map(|_| read_u32(&mut input).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel: usize = dims.iter().product();
        let mut payload = vec![0u8; numel * 4];
        input
            .read_exact(&mut payload)
            .map_err(|_| CheckpointError::Format(format!("truncated payload for `{name}`")))?;
        let data = payload
            .chunks_exact(4)
            .map(|b| T::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])).expect("f32 fits scalar"))
            .collect();
        let tensor = Tensor::new(dims, data).map_err(|e| CheckpointError::Format(e.to_string()))?;
        store.insert(name, tensor).map_err(|e| CheckpointError::Format(e.to_string()))?;
    }
    Ok(store)
}

/// Saves the union of `stores` (e.g. parameters and running statistics).
pub fn save_checkpoint<T: Scalar>(path: &Path, stores: &[&ParamStore<T>]) -> Result<(), CheckpointError> {
    let file = BufWriter::new(File::create(path)?);
    write_checkpoint(file, stores.iter().flat_map(|s| s.iter()))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ParamStore<T>, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
