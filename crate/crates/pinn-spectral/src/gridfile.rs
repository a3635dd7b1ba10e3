//! Flat binary grid container with a JSON sidecar.
//!
//! Layout: a 32-byte little-endian header followed by the row-major `f64`
//! payload.
//!
//! ```text
//! offset  size  field
//! 0       6     magic ("RDREF1" for reaction-diffusion references,
//!               "NTKM01" for kernel dumps)
//! 6       2     grid_n: u16, number of columns (spatial nodes / kernel size)
//! 8       4     nu:  f32
//! 12      4     rho: f32
//! 16      8     dt:  f64
//! 24      8     t_end: f64
//! ```
//!
//! The header's f32 fields are advisory; the sidecar `<path>.json` carries all
//! metadata at full precision plus a SHA-256 of the payload, and is what cache
//! validation trusts.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC_RD_REFERENCE: &[u8; 6] = b"RDREF1";
pub const MAGIC_KERNEL: &[u8; 6] = b"NTKM01";
pub const MAGIC_WEIGHTS: &[u8; 6] = b"WGTS01";

#[derive(Debug, Error)]
pub enum GridFileError {
    #[error("i/o error on grid file: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("corrupt grid file: {0}")]
    Corrupt(String),
    #[error("sidecar error: {0}")]
    Sidecar(String),
}

/// Full-precision metadata stored in the JSON sidecar.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridMeta {
    pub format: String,
    pub rows: usize,
    pub cols: usize,
    pub nu: f64,
    pub rho: f64,
    pub dt: f64,
    pub t_end: f64,
    pub payload_sha256: String,
    /// Free-form extras (seed, epoch, cache key, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug)]
pub struct GridFile {
    pub meta: GridMeta,
    pub data: Array2<f64>,
}

fn payload_digest(data: &Array2<f64>) -> String {
    let mut hasher = Sha256::new();
    for v in data.iter() {
        hasher.update(v.to_le_bytes());
    }
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// Writes header + payload + sidecar. `data` rows are grid rows (time slices
/// for references, kernel rows for dumps); `cols` must fit in a u16.
pub fn write_grid(
    path: &Path,
    magic: &[u8; 6],
    nu: f64,
    rho: f64,
    dt: f64,
    t_end: f64,
    data: &Array2<f64>,
    extra: BTreeMap<String, serde_json::Value>,
) -> Result<GridMeta, GridFileError> {
    let (rows, cols) = data.dim();
    if cols > u16::MAX as usize {
        return Err(GridFileError::Corrupt(format!(
            "grid width {cols} exceeds the u16 header field"
        )));
    }
    let mut header = [0u8; 32];
    header[0..6].copy_from_slice(magic);
    header[6..8].copy_from_slice(&(cols as u16).to_le_bytes());
    header[8..12].copy_from_slice(&(nu as f32).to_le_bytes());
    header[12..16].copy_from_slice(&(rho as f32).to_le_bytes());
    header[16..24].copy_from_slice(&dt.to_le_bytes());
    header[24..32].copy_from_slice(&t_end.to_le_bytes());

    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(&header)?;
    for v in data.iter() {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;

    let meta = GridMeta {
        format: String::from_utf8_lossy(magic).into_owned(),
        rows,
        cols,
        nu,
        rho,
        dt,
        t_end,
        payload_sha256: payload_digest(data),
        extra,
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| GridFileError::Sidecar(e.to_string()))?;
    fs::write(sidecar_path(path), json)?;
    Ok(meta)
}

/// Reads and validates a grid file: magic, payload length against the
/// sidecar's row/col counts, and the payload digest. Any mismatch is a
/// structured error rather than a panic.
pub fn read_grid(path: &Path, expect_magic: &[u8; 6]) -> Result<GridFile, GridFileError> {
    let mut f = std::io::BufReader::new(fs::File::open(path)?);
    let mut header = [0u8; 32];
    f.read_exact(&mut header)?;
    if &header[0..6] != expect_magic {
        return Err(GridFileError::BadMagic {
            expected: String::from_utf8_lossy(expect_magic).into_owned(),
            found: String::from_utf8_lossy(&header[0..6]).into_owned(),
        });
    }
    let cols = u16::from_le_bytes([header[6], header[7]]) as usize;

    let sidecar = fs::read_to_string(sidecar_path(path))
        .map_err(|e| GridFileError::Sidecar(format!("missing sidecar: {e}")))?;
    let meta: GridMeta =
        serde_json::from_str(&sidecar).map_err(|e| GridFileError::Sidecar(e.to_string()))?;
    if meta.cols != cols {
        return Err(GridFileError::Corrupt(format!(
            "header grid_n {cols} disagrees with sidecar cols {}",
            meta.cols
        )));
    }

    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    let expect_bytes = meta.rows * meta.cols * 8;
    if raw.len() != expect_bytes {
        return Err(GridFileError::Corrupt(format!(
            "payload is {} bytes, expected {expect_bytes}",
            raw.len()
        )));
    }
    let mut values = Vec::with_capacity(meta.rows * meta.cols);
    for chunk in raw.chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let data = Array2::from_shape_vec((meta.rows, meta.cols), values)
        .expect("length checked above");
    let digest = payload_digest(&data);
    if digest != meta.payload_sha256 {
        return Err(GridFileError::Corrupt(
            "payload digest does not match sidecar".into(),
        ));
    }
    Ok(GridFile { meta, data })
}
