//! Shared file containers: 8-bit binary PGM (P5) images and the "IFCM" raw
//! matrix format.
//!
//! IFCM layout: a 16-byte header — magic `IFCM`, u32 LE rows, u32 LE cols,
//! u32 LE reserved (zero) — followed by rows*cols f64 LE values, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad format: {0}")]
    Format(String),
}

const RAW_MAGIC: &[u8; 4] = b"IFCM";

/// Write a matrix in the IFCM raw container.
pub fn write_raw_matrix(path: &Path, m: &Array2<f64>) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RAW_MAGIC)?;
    w.write_all(&(m.nrows() as u32).to_le_bytes())?;
    w.write_all(&(m.ncols() as u32).to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a matrix from the IFCM raw container.
pub fn read_raw_matrix(path: &Path) -> Result<Array2<f64>, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[0..4] != RAW_MAGIC {
        return Err(IoError::Format("missing IFCM magic".into()));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut data = vec![0.0f64; rows * cols];
    let mut buf = [0u8; 8];
    for v in data.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| IoError::Format(format!("shape error: {e}")))
}

/// Write a [0,1]-valued matrix as an 8-bit binary PGM. Values are clamped and
/// rounded to the 0..=255 range.
pub fn write_pgm(path: &Path, m: &Array2<f64>) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", m.ncols(), m.nrows())?;
    for v in m.iter() {
        let byte = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        w.write_all(&[byte])?;
    }
    w.flush()?;
    Ok(())
}

/// Read an 8-bit binary PGM into a [0,1]-valued matrix.
pub fn read_pgm(path: &Path) -> Result<Array2<f64>, IoError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let mut next_token = |bytes: &[u8]| -> Result<String, IoError> {
        // Skip whitespace and '#' comment lines.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(IoError::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if next_token(&bytes)? != "P5" {
        return Err(IoError::Format("not a P5 PGM".into()));
    }
    let w: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| IoError::Format("bad width".into()))?;
    let h: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| IoError::Format("bad height".into()))?;
    let maxval: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| IoError::Format("bad maxval".into()))?;
    if maxval != 255 {
        return Err(IoError::Format(format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace byte after maxval
    if bytes.len() < pos + w * h {
        return Err(IoError::Format("truncated PGM payload".into()));
    }
    let data: Vec<f64> = bytes[pos..pos + w * h]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Array2::from_shape_vec((h, w), data).map_err(|e| IoError::Format(format!("shape error: {e}")))
}
