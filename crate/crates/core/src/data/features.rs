use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::InteractionDataset;
use crate::error::{LatticeError, Result};

const MAGIC: &[u8; 4] = b"LATF";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

/// One content channel: a dense `num_items x dim` matrix, row `i` describing item `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeatures {
    pub name: String,
    pub matrix: Array2<f64>,
}

impl ModalityFeatures {
    pub fn new(name: impl Into<String>, matrix: Array2<f64>) -> Result<Self> {
        let name = name.into();
        if let Some(v) = matrix.iter().find(|v| !v.is_finite()) {
            return Err(LatticeError::InvalidArgument(format!(
                "modality {} contains non-finite value {}",
                name, v
            )));
        }
        Ok(ModalityFeatures { name, matrix })
    }

    pub fn num_items(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Reads a `LATF` feature file: magic, u32 version, u64 rows, u64 cols, then
/// `rows * cols` little-endian f32 values in row-major order. The modality is
/// named after the file stem.
pub fn load_features(
    path: impl AsRef<Path>,
    dataset: &InteractionDataset,
) -> Result<ModalityFeatures> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| LatticeError::io(path, e))?;
    let bad = |message: String| LatticeError::FeatureFormat {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic, expected LATF".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {}", version)));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    if rows != dataset.num_items() {
        return Err(bad(format!(
            "{} rows but the dataset has {} items",
            rows,
            dataset.num_items()
        )));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("header dimensions overflow".into()))?;
    if bytes.len() - HEADER_LEN != expected {
        return Err(bad(format!(
            "payload is {} bytes, header implies {}",
            bytes.len() - HEADER_LEN,
            expected
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (k, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(bad(format!(
                "non-finite value at row {}, column {}",
                k / cols.max(1),
                k % cols.max(1)
            )));
        }
        data.push(v as f64);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "modality".into());
    let matrix = Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| bad(format!("bad shape: {}", e)))?;
    Ok(ModalityFeatures { name, matrix })
}

/// Writes a matrix in the `LATF` format (values narrowed to f32).
pub fn write_features(path: impl AsRef<Path>, matrix: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(matrix.ncols() as u64).to_le_bytes());
    for v in matrix.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| LatticeError::io(path, e))
}
