//! Reader and writer for the IDX files MNIST ships in.
//!
//! Layout: a big-endian `u32` magic (2051 for images, 2049 for labels), one
//! big-endian `u32` per dimension, then unsigned bytes in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use amr_core::data::{LabeledDataset, Task};
use amr_core::ndops::Matrix;

use crate::error::{format_err, io_err, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

/// Decoded IDX image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count × rows × cols` raw pixels.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, "truncated header"))
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(path, format!("bad image magic {magic}, expected {IMAGES_MAGIC}")));
    }
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| format_err(path, "image dimensions overflow"))?;
    let body = &bytes[16..];
    if body.len() != need {
        return Err(format_err(path, format!("expected {need} pixel bytes, found {}", body.len())));
    }
    Ok(IdxImages { rows, cols, pixels: body.to_vec() })
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(format_err(path, format!("bad label magic {magic}, expected {LABELS_MAGIC}")));
    }
    let count = read_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(format_err(path, format!("expected {count} labels, found {}", body.len())));
    }
    Ok(body.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count() as u32, images.rows as u32, images.cols as u32] {
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
    fs::read(path).map_err(io_err(path))
}

/// Loads an image/label pair as a 10-class dataset with pixels scaled by
/// 1/255 and images flattened row by row.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_images(&read(ip)?, ip)?;
    let labels = parse_labels(&read(lp)?, lp)?;
    if images.count() != labels.len() {
        return Err(format_err(lp, format!("{} labels for {} images", labels.len(), images.count())));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 9) {
        return Err(format_err(lp, format!("label {bad} is not a digit")));
    }
    let d = images.rows * images.cols;
    let features = Matrix::from_vec(images.count(), d, images.pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    Ok(LabeledDataset::new(features, labels.iter().map(|&y| y as i32).collect(), Task::Multiclass { classes: 10 })?)
}

/// Writes both files of an image/label pair.
pub fn save_idx(images: &IdxImages, labels: &[u8], images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, encode_images(images)).map_err(io_err(ip))?;
    fs::write(lp, encode_labels(labels)).map_err(io_err(lp))
}

/// The standard MNIST file names inside a directory.
#[derive(Debug, Clone)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            train_images: d.join("train-images-idx3-ubyte"),
            train_labels: d.join("train-labels-idx1-ubyte"),
            test_images: d.join("t10k-images-idx3-ubyte"),
            test_labels: d.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn exist(&self) -> bool {
        [&self.train_images, &self.train_labels, &self.test_images, &self.test_labels].iter().all(|p| p.is_file())
    }

    pub fn load(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        Ok((load_mnist_idx(&self.train_images, &self.train_labels)?, load_mnist_idx(&self.test_images, &self.test_labels)?))
    }
}
