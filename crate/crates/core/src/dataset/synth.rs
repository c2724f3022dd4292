//! Synthetic class data with known per-class volume fractions: class `k` of
//! `K` is a horizontal band covering `(k + 1) / (K + 1)` of the image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Condition, ConditionKind, ConditionedSample, Dataset, DatasetError, Result, SampleMeta};

/// Maximum jitter of the band coverage around the class target.
const COVERAGE_JITTER: f64 = 0.015;

pub fn class_target(class: usize, class_count: usize) -> f64 {
    (class + 1) as f64 / (class_count + 1) as f64
}

fn band_image(size: usize, coverage: f64, top: f64) -> Vec<f32> {
    let height = coverage * size as f64;
    let bottom = top + height;
    let mut image = vec![0.0f32; size * size];
    for row in 0..size {
        let (r0, r1) = (row as f64, row as f64 + 1.0);
        let overlap = (r1.min(bottom) - r0.max(top)).clamp(0.0, 1.0);
        image[row * size..(row + 1) * size].fill(overlap as f32);
    }
    image
}

/// `per_class` samples for each of `class_count` classes, ordered by class.
/// Band thickness is jittered by at most 0.015 of the image height and the
/// band position is uniform over the image.
pub fn synth_classes(class_count: usize, per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    if !(2..=10).contains(&class_count) {
        return Err(DatasetError::InvalidParameter(format!(
            "class count must be in 2..=10, got {class_count}"
        )));
    }
    if size == 0 {
        return Err(DatasetError::InvalidParameter("image size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = ConditionKind::Class {
        cardinality: class_count as u32,
    };
    let mut ds = Dataset::new(size, size, kind);
    for class in 0..class_count {
        let target = class_target(class, class_count);
        for _ in 0..per_class {
            let coverage = (target + rng.random_range(-COVERAGE_JITTER..=COVERAGE_JITTER)).clamp(0.0, 1.0);
            let slack = (1.0 - coverage) * size as f64;
            let top = rng.random_range(0.0..=slack);
            ds.push(ConditionedSample {
                image: band_image(size, coverage, top),
                condition: Condition::Class {
                    index: class as u32,
                    cardinality: class_count as u32,
                },
                meta: SampleMeta::default(),
            })?;
        }
    }
    Ok(ds)
}
