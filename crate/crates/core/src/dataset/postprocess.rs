use super::{DatasetError, Result};
use crate::image::Grid;

pub const KERNEL_SIZE: usize = 5;
pub const BLUR_SIGMA: f64 = 1.0;

/// Pixels at or above 0.5 become 1, the rest 0.
pub fn threshold(image: &Grid) -> Grid {
    Grid::new(
        image.width,
        image.height,
        image.data.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(),
    )
}

/// Truncated 5x5 Gaussian (sigma 1), renormalized to sum 1. Row-major.
pub fn gaussian_kernel() -> [[f64; KERNEL_SIZE]; KERNEL_SIZE] {
    let r = (KERNEL_SIZE / 2) as isize;
    let mut k = [[0.0; KERNEL_SIZE]; KERNEL_SIZE];
    let mut total = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * BLUR_SIGMA * BLUR_SIGMA)).exp();
            k[(dy + r) as usize][(dx + r) as usize] = w;
            total += w;
        }
    }
    for row in &mut k {
        for w in row.iter_mut() {
            *w /= total;
        }
    }
    k
}

/// Half-sample symmetric reflection: -1 -> 0, -2 -> 1, n -> n-1.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

pub fn gaussian_blur(image: &Grid) -> Result<Grid> {
    if image.width < KERNEL_SIZE || image.height < KERNEL_SIZE {
        return Err(DatasetError::Dimension(format!(
            "image {}x{} smaller than the {KERNEL_SIZE}x{KERNEL_SIZE} blur kernel",
            image.width, image.height
        )));
    }
    let k = gaussian_kernel();
    let r = (KERNEL_SIZE / 2) as isize;
    let (w, h) = (image.width, image.height);
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                let sy = reflect(y + dy, h);
                for dx in -r..=r {
                    let sx = reflect(x + dx, w);
                    acc += k[(dy + r) as usize][(dx + r) as usize] * image.data[sy * w + sx];
                }
            }
            out[y as usize * w + x as usize] = acc.clamp(0.0, 1.0);
        }
    }
    Ok(Grid::new(w, h, out))
}

/// Threshold at 0.5, then the normalized 5x5 Gaussian blur.
pub fn postprocess(image: &Grid) -> Result<Grid> {
    gaussian_blur(&threshold(image))
}
