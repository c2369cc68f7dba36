//! IDX binary ingestion (the MNIST container format).
//!
//! Big-endian throughout: magic 0x00000803 for image tensors, 0x00000801
//! for label vectors. Continuous mode rescales bytes to [-1, 1]; binary
//! mode thresholds at 0.5 after scaling to [0, 1].

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxMode {
    /// Bytes rescaled to [-1, 1].
    Continuous,
    /// Threshold 0.5: byte 127 maps to 0, byte 128 to 1.
    Binary,
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            msg: format!("truncated while reading a u32 at offset {offset}"),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parse an IDX image file into an N x D tensor.
pub fn load_idx_images(path: &Path, mode: IdxMode) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: format!("bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(&bytes, 4, path)? as usize;
    let rows = read_u32_be(&bytes, 8, path)? as usize;
    let cols = read_u32_be(&bytes, 12, path)? as usize;
    let d = rows * cols;
    let header = 16;
    let expected = header + n * d;
    if bytes.len() < expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            msg: format!(
                "payload truncated: need {expected} bytes for {n} images of {rows}x{cols}"
            ),
        });
    }
    let data: Vec<f64> = bytes[header..expected]
        .iter()
        .map(|&b| match mode {
            IdxMode::Continuous => b as f64 / 255.0 * 2.0 - 1.0,
            IdxMode::Binary => {
                if b as f64 / 255.0 >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect();
    Tensor::new(vec![n, d], data)
}

/// Row and column counts from an IDX image header.
pub fn image_dims(path: &Path) -> Result<(usize, usize)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: format!("bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let rows = read_u32_be(&bytes, 8, path)? as usize;
    let cols = read_u32_be(&bytes, 12, path)? as usize;
    Ok((rows, cols))
}

/// Parse an IDX label file into one byte per example.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: format!("bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(&bytes, 4, path)? as usize;
    let header = 8;
    if bytes.len() < header + n {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            msg: format!("payload truncated: need {} bytes for {n} labels", header + n),
        });
    }
    Ok(bytes[header..header + n].to_vec())
}

/// Images plus labels when a label path is supplied.
pub fn load_idx(
    images: &Path,
    labels: Option<&Path>,
    mode: IdxMode,
) -> Result<(Tensor, Option<Vec<u8>>)> {
    let tensor = load_idx_images(images, mode)?;
    let labels = match labels {
        Some(p) => {
            let l = load_idx_labels(p)?;
            if l.len() != tensor.shape()[0] {
                return Err(Error::Data(format!(
                    "{} labels for {} images",
                    l.len(),
                    tensor.shape()[0]
                )));
            }
            Some(l)
        }
        None => None,
    };
    Ok((tensor, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_temp(name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let mut path = std::env::temp_dir();
        path.push(format!("paramrel-idx-{}-{name}", std::process::id()));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(bytes).unwrap();
        path
    }

    fn image_fixture() -> Vec<u8> {
        // magic, n = 2, rows = 2, cols = 2, then 8 payload bytes
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 255, 127, 128, 64, 191, 1, 254]);
        bytes
    }

    #[test]
    fn fixture_parses_byte_exactly() {
        let path = write_temp("fixture", &image_fixture());
        let t = load_idx_images(&path, IdxMode::Continuous).unwrap();
        assert_eq!(t.shape(), &[2, 4]);
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[1], 1.0);
        assert!((t.data()[4] - (64.0 / 255.0 * 2.0 - 1.0)).abs() < 1e-15);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn binarization_threshold_rule() {
        let path = write_temp("threshold", &image_fixture());
        let t = load_idx_images(&path, IdxMode::Binary).unwrap();
        // bytes 127 and 128 straddle the 0.5 threshold
        assert_eq!(t.data()[2], 0.0);
        assert_eq!(t.data()[3], 1.0);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut bytes = image_fixture();
        bytes.truncate(20);
        let path = write_temp("truncated", &bytes);
        match load_idx_images(&path, IdxMode::Continuous) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("expected format error, got {other:?}"),
        }
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut bytes = image_fixture();
        bytes[3] = 0x01;
        let path = write_temp("magic", &bytes);
        assert!(matches!(
            load_idx_images(&path, IdxMode::Continuous),
            Err(Error::Format { offset: 0, .. })
        ));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn labels_round_trip() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[7, 1, 4]);
        let path = write_temp("labels", &bytes);
        assert_eq!(load_idx_labels(&path).unwrap(), vec![7, 1, 4]);
        std::fs::remove_file(path).ok();
    }
}
