//! The `TWMX` dense matrix file and its tag-list sidecars.
//!
//! Layout, all little-endian: magic `TWMX`, rows as u64, cols as u64, then
//! `rows * cols` f32 values in row-major order.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::dataset::TagSystem;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TWMX";

pub fn encode(values: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = values.dim();
    let mut out = Vec::with_capacity(20 + rows * cols * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in values.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(bad("missing TWMX header".into()));
    }
    let rows = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    let body = &bytes[20..];
    if body.len() != expected {
        return Err(bad(format!(
            "{rows}x{cols} needs {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
}

pub fn write(path: &Path, values: &Array2<f64>) -> Result<()> {
    std::fs::write(path, encode(values)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Array2<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// `<matrix path>.<suffix>`, e.g. `emb.mx.tags`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

pub fn write_tags(path: &Path, tags: &TagSystem) -> Result<()> {
    tags.save(path)
}

pub fn read_tags(path: &Path) -> Result<TagSystem> {
    TagSystem::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = ndarray::arr2(&[[1.0, 2.0, 3.0]]);
        let bytes = encode(&m);
        assert_eq!(&bytes[..4], b"TWMX");
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(bytes[24..28].try_into().unwrap()), 2.0);
        assert_eq!(bytes.len(), 20 + 12);
    }

    #[test]
    fn truncated_payload_rejected() {
        let m = ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let bytes = encode(&m);
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(decode(b"TWML", Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_f32_exact(rows in 0usize..6, cols in 0usize..6, seed in any::<u32>()) {
            let m = Array2::from_shape_fn((rows, cols), |(i, j)| {
                ((i * 31 + j * 7) as f64 + seed as f64 * 1e-3).sin() as f32 as f64
            });
            let back = decode(&encode(&m), Path::new("x")).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
