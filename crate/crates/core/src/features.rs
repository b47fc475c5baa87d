//! Frame-feature sidecar files.
//!
//! Layout: ASCII magic `VKF1`, then `N_V` and `D1` as little-endian `u32`,
//! then `N_V · D1` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VKF1";

pub fn encode(features: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = features.dim();
    let mut out = Vec::with_capacity(12 + rows * cols * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in features.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::FeatureFormat("missing VKF1 header".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::FeatureFormat("header dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(Error::FeatureFormat(format!(
            "header declares {rows}x{cols} but payload holds {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::FeatureFormat(e.to_string()))
}

pub fn read_feature_file(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::FeatureFormat(m) => Error::FeatureFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_feature_file(path: &Path, features: &Array2<f64>) -> Result<()> {
    fs::write(path, encode(features)).map_err(|e| Error::io(path, e))
}

/// Reads either a `VKF1` sidecar or, for `.json` paths, a nested array.
pub fn read_any(path: &Path) -> Result<Array2<f64>> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows: Vec<Vec<f32>> = serde_json::from_str(&text)?;
        from_rows(&rows)
    } else {
        read_feature_file(path)
    }
}

pub fn from_rows(rows: &[Vec<f32>]) -> Result<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::Dimension {
            expected: cols,
            found: bad.len(),
        });
    }
    let data = rows.iter().flatten().map(|&v| v as f64).collect();
    Array2::from_shape_vec((rows.len(), cols), data).map_err(|e| Error::FeatureFormat(e.to_string()))
}
