//! Single-channel images and binary PGM output.

use std::io::Write;
use std::path::Path;

/// Row-major single-channel image, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length");
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_f32(width: usize, height: usize, data: &[f32]) -> Self {
        Self::new(width, height, data.iter().map(|&v| v as f64).collect())
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Encodes as binary PGM (P5, maxval 255); values are clamped to [0, 1].
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&self.to_pgm())
    }
}

/// Tiles images into a `cols`-wide montage with 2-pixel separators at grey
/// level 128. All images must share dimensions.
pub fn montage(images: &[Grid], cols: usize) -> Option<Grid> {
    const SEP: usize = 2;
    let first = images.first()?;
    let cols = cols.max(1).min(images.len());
    let rows = images.len().div_ceil(cols);
    let (w, h) = (first.width, first.height);
    let width = cols * w + (cols - 1) * SEP;
    let height = rows * h + (rows - 1) * SEP;
    let mut out = Grid::filled(width, height, 128.0 / 255.0);
    for (k, img) in images.iter().enumerate() {
        if img.width != w || img.height != h {
            return None;
        }
        let (ox, oy) = ((k % cols) * (w + SEP), (k / cols) * (h + SEP));
        for y in 0..h {
            for x in 0..w {
                out.data[(oy + y) * width + ox + x] = img.get(x, y);
            }
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_pixels() {
        let g = Grid::new(2, 1, vec![0.0, 1.0]);
        assert_eq!(g.to_pgm(), b"P5\n2 1\n255\n\x00\xff".to_vec());
    }

    #[test]
    fn montage_layout() {
        let a = Grid::filled(3, 3, 0.0);
        let b = Grid::filled(3, 3, 1.0);
        let m = montage(&[a.clone(), b, a], 2).unwrap();
        assert_eq!((m.width, m.height), (8, 8));
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(5, 0), 1.0);
        assert_eq!(m.to_pgm()[11 + 3], 128);
        // unused slot keeps the separator shade
        assert_eq!(m.get(7, 7), 128.0 / 255.0);
    }
}
