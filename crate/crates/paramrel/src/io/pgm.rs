//! Binary PGM (P5) emission for grayscale sample grids.

use std::path::Path;

use crate::error::{Error, Result};

/// Map a value in [-1, 1] to a byte, [-1, 1] -> [0, 255] linearly.
fn to_byte(v: f64) -> u8 {
    (((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0)) as u8
}

/// Write one grayscale image of `width x height` values in [-1, 1].
pub fn write_pgm(values: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Dim(format!(
            "pgm: {} values for {width}x{height}",
            values.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| to_byte(v)));
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Tile images of identical size into a row-major grid, `per_row` across.
pub fn write_pgm_grid(
    images: &[Vec<f64>],
    width: usize,
    height: usize,
    per_row: usize,
    path: &Path,
) -> Result<()> {
    if images.is_empty() || per_row == 0 {
        return Err(Error::Usage("pgm grid needs at least one image".into()));
    }
    for (i, img) in images.iter().enumerate() {
        if img.len() != width * height {
            return Err(Error::Dim(format!(
                "pgm grid: image {i} has {} values for {width}x{height}",
                img.len()
            )));
        }
    }
    let cols = per_row.min(images.len());
    let rows = images.len().div_ceil(cols);
    let total_w = cols * width;
    let total_h = rows * height;
    let mut canvas = vec![-1.0; total_w * total_h];
    for (i, img) in images.iter().enumerate() {
        let gr = i / cols;
        let gc = i % cols;
        for r in 0..height {
            for c in 0..width {
                canvas[(gr * height + r) * total_w + gc * width + c] = img[r * width + c];
            }
        }
    }
    write_pgm(&canvas, total_w, total_h, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let mut path = std::env::temp_dir();
        path.push(format!("paramrel-pgm-{}-{name}.pgm", std::process::id()));
        path
    }

    #[test]
    fn header_and_extreme_values_byte_exact() {
        let path = temp_path("exact");
        write_pgm(&[-1.0, 1.0, 1.0, -1.0], 2, 2, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..9], b"P5\n2 2\n255\n".split_at(9).0);
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 255, 255, 0]);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn header_is_exact_prefix() {
        let path = temp_path("header");
        write_pgm(&[0.0; 6], 3, 2, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), b"P5\n3 2\n255\n".len() + 6);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn grid_tiles_left_to_right() {
        let path = temp_path("grid");
        let images = vec![vec![1.0; 4], vec![-1.0; 4], vec![1.0; 4]];
        write_pgm_grid(&images, 2, 2, 2, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // 2 columns x 2 rows of 2x2 tiles -> 4x4 canvas
        assert!(bytes.starts_with(b"P5\n4 4\n255\n"));
        let payload = &bytes[b"P5\n4 4\n255\n".len()..];
        assert_eq!(payload[0], 255); // image 0 top-left
        assert_eq!(payload[2], 0); // image 1 top-left
        std::fs::remove_file(path).ok();
    }
}
