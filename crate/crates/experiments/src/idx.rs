//! IDX files (the MNIST container format).
//!
//! Only unsigned-byte payloads are supported: image files start with the
//! magic `0x00000803` followed by three big-endian `u32` dimensions
//! (count, rows, cols); label files start with `0x00000801` and one `u32`
//! count. Pixels are scaled to `[0, 1]` and kept row-major.

use std::path::Path;

use sft_core::{Dataset, Matrix};

use crate::error::{ExperimentError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` pixels.
    pub pixels: Vec<u8>,
}

/// Parse failure with the byte offset where it was detected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxError {
    pub offset: u64,
    pub message: String,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u32_be(&mut self, what: &str) -> std::result::Result<u32, IdxError> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| IdxError {
            offset: self.pos as u64,
            message: format!("truncated {what}"),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("slice has length 4")))
    }

    fn take(&mut self, len: usize, what: &str) -> std::result::Result<&'a [u8], IdxError> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(IdxError {
                offset: self.bytes.len() as u64,
                message: format!("truncated {what}: expected {len} bytes, found {available}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
}

fn expect_magic(c: &mut Cursor<'_>, expected: u32) -> std::result::Result<(), IdxError> {
    let magic = c.u32_be("magic")?;
    if magic != expected {
        return Err(IdxError {
            offset: 0,
            message: format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        });
    }
    Ok(())
}

pub fn decode_images(bytes: &[u8]) -> std::result::Result<IdxImages, IdxError> {
    let mut c = Cursor { bytes, pos: 0 };
    expect_magic(&mut c, IMAGES_MAGIC)?;
    let count = c.u32_be("image count")? as usize;
    let rows = c.u32_be("row count")? as usize;
    let cols = c.u32_be("column count")? as usize;
    let pixels = c.take(count * rows * cols, "pixel data")?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn decode_labels(bytes: &[u8]) -> std::result::Result<Vec<u8>, IdxError> {
    let mut c = Cursor { bytes, pos: 0 };
    expect_magic(&mut c, LABELS_MAGIC)?;
    let count = c.u32_be("label count")? as usize;
    Ok(c.take(count, "label data")?.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| ExperimentError::io(path, e))
}

fn format_err(path: &Path, e: IdxError) -> ExperimentError {
    ExperimentError::Format {
        path: path.to_path_buf(),
        offset: e.offset,
        message: e.message,
    }
}

/// Loads an image/label pair as a dataset with `classes` classes.
pub fn load_idx(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    let imgs = decode_images(&read(images)?).map_err(|e| format_err(images, e))?;
    let labs = decode_labels(&read(labels)?).map_err(|e| format_err(labels, e))?;
    if imgs.count != labs.len() {
        return Err(ExperimentError::Data(format!(
            "{} images but {} labels",
            imgs.count,
            labs.len()
        )));
    }
    if let Some((i, &y)) = labs.iter().enumerate().find(|(_, &y)| y as usize >= classes) {
        return Err(ExperimentError::Data(format!(
            "{}: label {y} of example {i} is out of range for {classes} classes",
            labels.display()
        )));
    }
    let features = imgs.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let matrix = Matrix::from_vec(imgs.count, imgs.rows * imgs.cols, features)?;
    Ok(Dataset::new(
        matrix,
        labs.into_iter().map(usize::from).collect(),
        classes,
    )?)
}
