//! The `f64le` matrix container shared by feature files, model files and
//! incremental checkpoints.
//!
//! Layout: the 8-byte magic `IRSFEAT1`, then `u32` rows and `u32` columns
//! (little-endian), then rows×cols little-endian `f64` values stored
//! column-major, so each column (sample) is contiguous.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::{IrsError, Result};

pub const MAGIC: &[u8; 8] = b"IRSFEAT1";
const HEADER_LEN: usize = 16;

pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    // nalgebra storage is already column-major.
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a matrix; `path` is only used to label errors.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<DMatrix<f64>> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(IrsError::format(path, "missing IRSFEAT1 header"));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = rows * cols;
    let found = payload.len() / 8;
    if payload.len() % 8 != 0 || found < expected {
        return Err(IrsError::PayloadTruncated { expected, found });
    }
    if found > expected {
        return Err(IrsError::format(
            path,
            format!("{} trailing bytes after payload", payload.len() - 8 * expected),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_vec(rows, cols, values))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, encode_matrix(m)).map_err(|e| IrsError::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| IrsError::io(path, e))?;
    decode_matrix(&bytes, path)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| IrsError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| IrsError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable header");
    fs::write(path, text).map_err(|e| IrsError::io(path, e))
}

/// Sibling payload path: `model.json` + `p` -> `model.p.f64le`.
pub(crate) fn payload_path(header: &Path, tag: &str) -> std::path::PathBuf {
    let stem = header
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "payload".into());
    header.with_file_name(format!("{stem}.{tag}.f64le"))
}
