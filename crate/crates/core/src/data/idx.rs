//! IDX binary files (the MNIST distribution format), optionally gzip'd.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images as `[n, rows, cols]` values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[f64] {
        let s = self.rows * self.cols;
        &self.pixels[i * s..(i + 1) * s]
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated IDX header at byte {at}")))
}

fn body<'a>(bytes: &'a [u8], header: usize, len: usize) -> Result<&'a [u8]> {
    if bytes.len() < header + len {
        return Err(Error::Format(format!(
            "truncated IDX body: expected {len} bytes after the header, found {}",
            bytes.len().saturating_sub(header)
        )));
    }
    Ok(&bytes[header..header + len])
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("bad IDX image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let raw = body(bytes, 16, n * rows * cols)?;
    Ok(IdxImages {
        n,
        rows,
        cols,
        pixels: raw.iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!("bad IDX label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    Ok(body(bytes, 8, n)?.to_vec())
}

/// Reads a file, decompressing it when it starts with the gzip signature.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Loads an image file and its label file, checking that the counts agree.
pub fn load_idx(images: &Path, labels: &Path) -> Result<(IdxImages, Vec<u8>)> {
    let im = parse_images(&read_maybe_gz(images)?)?;
    let lb = parse_labels(&read_maybe_gz(labels)?)?;
    if im.n != lb.len() {
        return Err(Error::Format(format!("{} images but {} labels", im.n, lb.len())));
    }
    Ok((im, lb))
}

/// Locates `<stem>` or `<stem>.gz` in `dir`.
fn find(dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Format(format!("{stem}[.gz] not found in {}", dir.display())))
}

/// Standard MNIST file names under `dir`; `train` selects the training split.
pub fn load_mnist(dir: &Path, train: bool) -> Result<(IdxImages, Vec<u8>)> {
    let prefix = if train { "train" } else { "t10k" };
    let images = find(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let labels = find(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    load_idx(&images, &labels)
}
