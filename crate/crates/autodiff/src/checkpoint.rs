//! Binary checkpoint container: JSON header plus raw little-endian buffers.

use crate::array::Array;
use crate::params::ModelParams;
use crate::scalar::Scalar;
use crate::{AutodiffError, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"REGCKPT1";

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    config: serde_json::Value,
    entries: Vec<EntryMeta>,
}

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    path: String,
    rows: usize,
    cols: usize,
    trainable: bool,
    offset: u64,
}

fn io_err(path: &Path, source: std::io::Error) -> AutodiffError {
    AutodiffError::CheckpointIo {
        path: path.display().to_string(),
        source,
    }
}

fn bad(path: &Path, msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Writes parameters and an opaque config blob. Buffers are raw
/// little-endian scalars, so a round trip is bitwise exact.
pub fn save<S: Scalar>(
    path: impl AsRef<Path>,
    params: &ModelParams<S>,
    config: &serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    for (name, entry) in params.iter() {
        entries.push(EntryMeta {
            path: name.clone(),
            rows: entry.value.rows,
            cols: entry.value.cols,
            trainable: entry.trainable,
            offset,
        });
        offset += (entry.value.len() * S::BYTES) as u64;
    }
    let header = Header {
        version: 1,
        dtype: S::DTYPE.to_string(),
        config: config.clone(),
        entries,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| bad(path, format!("header encode: {e}")))?;

    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC).map_err(|e| io_err(path, e))?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())
        .map_err(|e| io_err(path, e))?;
    w.write_all(&header_bytes).map_err(|e| io_err(path, e))?;
    for (_, entry) in params.iter() {
        for &x in &entry.value.data {
            w.write_all(&x.to_le_bytes_vec()).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Reads only the stored dtype, so callers can pick a loader type first.
pub fn peek_dtype(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(bad(path, "not a checkpoint file (bad magic)"));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes).map_err(|e| io_err(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(|e| io_err(path, e))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| bad(path, format!("header decode: {e}")))?;
    Ok(header.dtype)
}

/// Reads a checkpoint written by `save` with the same scalar type. A dtype
/// mismatch is an error, never a silent cast.
pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<(ModelParams<S>, serde_json::Value)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(bad(path, "not a checkpoint file (bad magic)"));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes).map_err(|e| io_err(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(|e| io_err(path, e))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| bad(path, format!("header decode: {e}")))?;
    if header.version != 1 {
        return Err(bad(path, format!("unsupported version {}", header.version)));
    }
    if header.dtype != S::DTYPE {
        return Err(bad(
            path,
            format!("dtype is {}, loader wants {}", header.dtype, S::DTYPE),
        ));
    }

    let mut data = Vec::new();
    r.read_to_end(&mut data).map_err(|e| io_err(path, e))?;

    let mut params = ModelParams::new();
    for meta in &header.entries {
        let count = meta.rows * meta.cols;
        let lo = meta.offset as usize;
        let hi = lo + count * S::BYTES;
        if hi > data.len() {
            return Err(bad(
                path,
                format!("{}: buffer [{lo}, {hi}) beyond data of {}", meta.path, data.len()),
            ));
        }
        let mut values = Vec::with_capacity(count);
        for chunk in data[lo..hi].chunks_exact(S::BYTES) {
            values.push(S::from_le_slice(chunk));
        }
        let value = Array::from_vec(meta.rows, meta.cols, values)
            .map_err(|_| bad(path, format!("{}: inconsistent shape", meta.path)))?;
        params.insert(meta.path.clone(), value, meta.trainable);
    }
    Ok((params, header.config))
}
