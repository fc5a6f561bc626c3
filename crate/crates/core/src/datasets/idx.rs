use std::path::Path;

use thiserror::Error;

use super::set::LabeledSet;
use crate::error::Result;
use crate::models::ImageShape;
use crate::numcore::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("bad IDX magic in {file}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { file: String, expected: u32, found: u32 },
    #[error("truncated IDX {file}: need {needed} bytes, have {actual}")]
    Truncated { file: String, needed: usize, actual: usize },
    #[error("IDX count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("reading {file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IdxOptions {
    /// EMNIST stores images column-major; set this to transpose them back.
    pub transposed: bool,
}

fn be_u32(bytes: &[u8], at: usize, file: &str) -> std::result::Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(IdxError::Truncated {
            file: file.to_string(),
            needed: at + 4,
            actual: bytes.len(),
        })
}

/// Parses an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], file: &str) -> std::result::Result<(usize, usize, usize, Vec<u8>), IdxError> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != IMAGES_MAGIC {
        return Err(IdxError::BadMagic {
            file: file.to_string(),
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(bytes, 4, file)? as usize;
    let rows = be_u32(bytes, 8, file)? as usize;
    let cols = be_u32(bytes, 12, file)? as usize;
    let needed = 16 + n * rows * cols;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            file: file.to_string(),
            needed,
            actual: bytes.len(),
        });
    }
    Ok((n, rows, cols, bytes[16..needed].to_vec()))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8], file: &str) -> std::result::Result<Vec<u8>, IdxError> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != LABELS_MAGIC {
        return Err(IdxError::BadMagic {
            file: file.to_string(),
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(bytes, 4, file)? as usize;
    let needed = 8 + n;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            file: file.to_string(),
            needed,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledSet> {
    load_idx_with(images_path, labels_path, IdxOptions::default())
}

/// Loads an image/label IDX pair; pixels are scaled to `[0, 1]`.
pub fn load_idx_with(images_path: &Path, labels_path: &Path, opts: IdxOptions) -> Result<LabeledSet> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| IdxError::Io {
            file: p.display().to_string(),
            source,
        })
    };
    let img_bytes = read(images_path)?;
    let lbl_bytes = read(labels_path)?;
    let (n, rows, cols, pixels) = parse_idx_images(&img_bytes, &images_path.display().to_string())?;
    let labels = parse_idx_labels(&lbl_bytes, &labels_path.display().to_string())?;
    if labels.len() != n {
        return Err(IdxError::CountMismatch {
            images: n,
            labels: labels.len(),
        }
        .into());
    }
    let plane = rows * cols;
    let mut data = Vec::with_capacity(n * plane);
    for i in 0..n {
        let img = &pixels[i * plane..(i + 1) * plane];
        if opts.transposed {
            for r in 0..rows {
                for c in 0..cols {
                    data.push(f64::from(img[c * rows + r]) / 255.0);
                }
            }
        } else {
            data.extend(img.iter().map(|&p| f64::from(p) / 255.0));
        }
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    LabeledSet::new(Matrix::from_vec(n, plane, data)?, labels, classes, ImageShape::new(1, rows, cols))
}
