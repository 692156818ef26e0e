//! Binary dense-matrix persistence.
//!
//! Format: 8-byte little-endian row count, 8-byte little-endian column count,
//! then the column-major IEEE-754 float64 payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Writes a matrix in the shared binary format.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    // nalgebra stores column-major, so the slice is already in file order.
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let rows = u64::from_le_bytes(buf8) as usize;
    r.read_exact(&mut buf8)?;
    let cols = u64::from_le_bytes(buf8) as usize;
    let count = rows.checked_mul(cols).ok_or_else(|| Error::Format {
        path: path.display().to_string(),
        detail: "row*col overflow".into(),
    })?;
    let mut data = vec![0.0f64; count];
    for v in data.iter_mut() {
        r.read_exact(&mut buf8)?;
        *v = f64::from_le_bytes(buf8);
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}
