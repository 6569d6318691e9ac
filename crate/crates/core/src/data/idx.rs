//! IDX container parsing (the MNIST-family format): big-endian magic,
//! dimension sizes, u8 payload.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use ndarray::Array1;
use std::fs::File;
use std::io::Read;
use std::path::Path;

const MAGIC_IMAGES: u32 = 0x0000_0803;
const MAGIC_LABELS: u32 = 0x0000_0801;

/// Flattened image set with pixel intensities scaled to [0, 1].
#[derive(Debug, Clone)]
pub struct IdxImages<F: Scalar> {
    pub images: Vec<Array1<F>>,
    pub rows: usize,
    pub cols: usize,
}

fn read_u32_be(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(CoreError::Format {
            what,
            detail: "truncated header".into(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Loads an IDX image file (magic 0x00000803) as intensity grids in [0, 1].
pub fn load_idx_images<F: Scalar>(path: &Path) -> Result<IdxImages<F>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let magic = read_u32_be(&bytes, 0, "IDX image file")?;
    if magic != MAGIC_IMAGES {
        return Err(CoreError::Format {
            what: "IDX image file",
            detail: format!("bad magic {magic:#010x}, expected {MAGIC_IMAGES:#010x}"),
        });
    }
    let n = read_u32_be(&bytes, 4, "IDX image file")? as usize;
    let rows = read_u32_be(&bytes, 8, "IDX image file")? as usize;
    let cols = read_u32_be(&bytes, 12, "IDX image file")? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(CoreError::Format {
            what: "IDX image file",
            detail: format!("payload length {} != expected {}", bytes.len(), expected),
        });
    }
    let scale = F::from_f64_c(1.0 / 255.0);
    let images = (0..n)
        .map(|i| {
            let start = 16 + i * rows * cols;
            bytes[start..start + rows * cols]
                .iter()
                .map(|&b| F::from_u8(b).unwrap() * scale)
                .collect()
        })
        .collect();
    Ok(IdxImages { images, rows, cols })
}

/// Loads an IDX label file (magic 0x00000801).
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let magic = read_u32_be(&bytes, 0, "IDX label file")?;
    if magic != MAGIC_LABELS {
        return Err(CoreError::Format {
            what: "IDX label file",
            detail: format!("bad magic {magic:#010x}, expected {MAGIC_LABELS:#010x}"),
        });
    }
    let n = read_u32_be(&bytes, 4, "IDX label file")? as usize;
    if bytes.len() != 8 + n {
        return Err(CoreError::Format {
            what: "IDX label file",
            detail: format!("payload length {} != expected {}", bytes.len(), 8 + n),
        });
    }
    Ok(bytes[8..].to_vec())
}
