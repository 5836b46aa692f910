use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn f32_to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_to_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::ShapeMismatch(format!("{} bytes is not a whole number of 32-bit floats", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    fs::write(path, f32_to_bytes(values))?;
    Ok(())
}

/// Reads a raw little-endian float file and checks its length.
pub fn read_f32(path: &Path, expected_len: usize) -> Result<Vec<f32>> {
    let bytes = read_bytes(path)?;
    if bytes.len() != expected_len * 4 {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} bytes, expected {} ({} floats)",
            path.display(),
            bytes.len(),
            expected_len * 4,
            expected_len
        )));
    }
    bytes_to_f32(&bytes)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}
