use rand::{seq::index, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConditionedSample, Dataset, Result};

/// Sparse additive noise: `count` distinct pixels, each shifted by a
/// uniform amount in `[-amplitude, amplitude]` and clamped to [0, 1].
pub fn augment(sample: &ConditionedSample, noise_count: usize, noise_amplitude: f32, seed: u64) -> ConditionedSample {
    let mut out = sample.clone();
    if noise_count == 0 || noise_amplitude == 0.0 || out.image.is_empty() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = out.image.len();
    for i in index::sample(&mut rng, n, noise_count.min(n)) {
        let delta: f32 = rng.random_range(-noise_amplitude..=noise_amplitude);
        out.image[i] = (out.image[i] + delta).clamp(0.0, 1.0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Noisy pixels per sample; `None` means 1% of the pixel count.
    pub noise_count: Option<usize>,
    pub noise_amplitude: f32,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            noise_count: None,
            noise_amplitude: 0.5,
            seed: 0,
        }
    }
}

/// Returns the originals followed by one noisy copy of each, doubling the
/// dataset. Copy `i` uses seed `params.seed + i`.
pub fn augment_dataset(ds: &Dataset, params: &AugmentParams) -> Result<Dataset> {
    let pixels = ds.width() * ds.height();
    let count = params.noise_count.unwrap_or_else(|| (pixels / 100).max(1));
    let mut out = ds.clone();
    for (i, s) in ds.samples().iter().enumerate() {
        out.push(augment(s, count, params.noise_amplitude, params.seed.wrapping_add(i as u64)))?;
    }
    Ok(out)
}
