//! IDX (MNIST) ingestion. Headers are big-endian: a magic word, the item
//! count, and for images the row and column counts, followed by raw `u8`
//! data.

use std::path::Path;

use super::{Condition, ConditionKind, ConditionedSample, Dataset, DatasetError, Result, SampleMeta};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DatasetError::Format {
            offset,
            message: "truncated IDX header".into(),
        })
}

/// Returns (count, rows, cols, pixel bytes).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DatasetError::Format {
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = count * rows * cols;
    let data = &bytes[16..];
    if data.len() != need {
        return Err(DatasetError::Format {
            offset: 16 + data.len().min(need),
            message: format!("expected {need} pixel bytes, found {}", data.len()),
        });
    }
    Ok((count, rows, cols, data))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DatasetError::Format {
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let data = &bytes[8..];
    if data.len() != count {
        return Err(DatasetError::Format {
            offset: 8 + data.len().min(count),
            message: format!("expected {count} labels, found {}", data.len()),
        });
    }
    Ok(data)
}

/// Loads an IDX image/label pair as a 10-class dataset with pixels scaled to
/// [0, 1]. With `downscale`, each image is 2x2 average-pooled.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>, downscale: bool) -> Result<Dataset> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;
    let (count, rows, cols, pixels) = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != count {
        return Err(DatasetError::Consistency(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    if downscale && (rows % 2 != 0 || cols % 2 != 0) {
        return Err(DatasetError::Dimension(format!(
            "cannot 2x2-pool a {rows}x{cols} image"
        )));
    }
    let (h, w) = if downscale { (rows / 2, cols / 2) } else { (rows, cols) };
    let mut ds = Dataset::new(w, h, ConditionKind::Class { cardinality: 10 });
    for (img, &label) in pixels.chunks_exact(rows * cols).zip(labels) {
        if label > 9 {
            return Err(DatasetError::Consistency(format!("label {label} is not a digit")));
        }
        let image = if downscale {
            let mut out = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    let s: u32 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(dy, dx)| img[(2 * y + dy) * cols + 2 * x + dx] as u32)
                        .sum();
                    out.push(s as f32 / (4.0 * 255.0));
                }
            }
            out
        } else {
            img.iter().map(|&p| p as f32 / 255.0).collect()
        };
        ds.push(ConditionedSample {
            image,
            condition: Condition::Class {
                index: label as u32,
                cardinality: 10,
            },
            meta: SampleMeta::default(),
        })?;
    }
    Ok(ds)
}
