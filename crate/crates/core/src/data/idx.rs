//! IDX container files (the MNIST distribution format).
//!
//! Layout: big-endian `u32` magic (`0x00000803` for 3-D unsigned-byte
//! images, `0x00000801` for 1-D labels), one big-endian `u32` per
//! dimension, then the raw unsigned-byte payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded image file: `count × (rows·cols)` pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: DenseMatrix,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Data(format!("{}: file not found", path.display()))
        } else {
            Error::io(format!("reading {}", path.display()), e)
        }
    })
}

fn header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 * (1 + dims);
    if bytes.len() < need {
        return Err(Error::Format {
            path: path.into(),
            detail: format!("header needs {need} bytes, file has {}", bytes.len()),
        });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let found = word(0);
    if found != magic {
        return Err(Error::Format {
            path: path.into(),
            detail: format!("magic {found:#010x}, expected {magic:#010x}"),
        });
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

fn payload<'a>(path: &Path, bytes: &'a [u8], offset: usize, expected: usize) -> Result<&'a [u8]> {
    let found = bytes.len() - offset;
    if found != expected {
        return Err(Error::Length {
            path: path.into(),
            expected,
            found,
        });
    }
    Ok(&bytes[offset..])
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read(path)?;
    let dims = header(path, &bytes, IMAGES_MAGIC, 3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let body = payload(path, &bytes, 16, n * rows * cols)?;
    if n == 0 || rows * cols == 0 {
        return Err(Error::Data(format!("{}: image file is empty", path.display())));
    }
    let data = body.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(IdxImages {
        rows,
        cols,
        pixels: DenseMatrix::new(n, rows * cols, data)?,
    })
}

/// Images as an `n × (rows·cols)` matrix with values `byte / 255`.
pub fn load_idx_images(path: &Path) -> Result<DenseMatrix> {
    Ok(read_idx_images(path)?.pixels)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read(path)?;
    let n = header(path, &bytes, LABELS_MAGIC, 1)?[0];
    Ok(payload(path, &bytes, 8, n)?.iter().map(|&b| usize::from(b)).collect())
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    let per = rows * cols;
    if per == 0 || pixels.len() % per != 0 {
        return Err(Error::Argument(format!(
            "{} pixel bytes do not form {rows}x{cols} images",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGES_MAGIC, (pixels.len() / per) as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Inverse of the `/255` scaling, for re-encoding loaded images.
pub fn pixels_to_bytes(pixels: &DenseMatrix) -> Vec<u8> {
    pixels
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let bytes = encode_idx_images(rows, cols, pixels)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    fs::write(path, encode_idx_labels(labels))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
