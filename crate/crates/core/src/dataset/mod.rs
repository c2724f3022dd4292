//! Labeled image datasets: SIMP sweeps, augmentation, post-processing,
//! persistence, IDX ingestion and synthetic class data.

mod augment;
mod format;
mod mnist;
mod postprocess;
mod sweep;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fem::FemError;
use crate::image::Grid;

pub use augment::{augment, augment_dataset, AugmentParams};
pub use format::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use mnist::{load_mnist_idx, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use postprocess::{gaussian_blur, gaussian_kernel, postprocess, threshold, BLUR_SIGMA, KERNEL_SIZE};
pub use sweep::{sweep_generate, SweepGrid};
pub use synth::{class_target, synth_classes};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Side information attached to a training image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    /// Continuous design target, e.g. a volume fraction in [0, 1].
    Continuous(f32),
    Class { index: u32, cardinality: u32 },
}

impl Condition {
    pub fn kind(&self) -> ConditionKind {
        match *self {
            Condition::Continuous(_) => ConditionKind::Continuous,
            Condition::Class { cardinality, .. } => ConditionKind::Class { cardinality },
        }
    }

    /// Value as stored on disk: the continuous value, or the class index.
    pub fn stored_value(&self) -> f32 {
        match *self {
            Condition::Continuous(v) => v,
            Condition::Class { index, .. } => index as f32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionKind {
    Continuous,
    Class { cardinality: u32 },
}

/// SIMP provenance of a sample; all zero for non-SIMP data.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SampleMeta {
    pub volfrac: f32,
    pub penal: f32,
    pub rmin: f32,
    pub compliance: f32,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedSample {
    /// Row-major pixels in [0, 1].
    pub image: Vec<f32>,
    pub condition: Condition,
    pub meta: SampleMeta,
}

impl ConditionedSample {
    pub fn pixel_mean(&self) -> f64 {
        self.image.iter().map(|&v| v as f64).sum::<f64>() / self.image.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    width: usize,
    height: usize,
    kind: ConditionKind,
    samples: Vec<ConditionedSample>,
}

impl Dataset {
    pub fn new(width: usize, height: usize, kind: ConditionKind) -> Self {
        Self {
            width,
            height,
            kind,
            samples: Vec::new(),
        }
    }

    pub fn from_samples(
        width: usize,
        height: usize,
        kind: ConditionKind,
        samples: Vec<ConditionedSample>,
    ) -> Result<Self> {
        let mut ds = Self::new(width, height, kind);
        for s in samples {
            ds.push(s)?;
        }
        Ok(ds)
    }

    /// Appends a sample after checking dimensions, condition kind and
    /// pixel range.
    pub fn push(&mut self, sample: ConditionedSample) -> Result<()> {
        if sample.image.len() != self.width * self.height {
            return Err(DatasetError::Dimension(format!(
                "sample has {} pixels, dataset is {}x{}",
                sample.image.len(),
                self.width,
                self.height
            )));
        }
        if sample.condition.kind() != self.kind {
            return Err(DatasetError::Consistency(format!(
                "condition {:?} does not match dataset kind {:?}",
                sample.condition, self.kind
            )));
        }
        if let Condition::Class { index, cardinality } = sample.condition {
            if index >= cardinality {
                return Err(DatasetError::Consistency(format!(
                    "class index {index} >= cardinality {cardinality}"
                )));
            }
        }
        if sample.image.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DatasetError::InvalidParameter("pixel outside [0, 1]".into()));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn kind(&self) -> ConditionKind {
        self.kind
    }

    pub fn samples(&self) -> &[ConditionedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image(&self, i: usize) -> Grid {
        Grid::from_f32(self.width, self.height, &self.samples[i].image)
    }

    /// Seeded permutation of the samples.
    pub fn shuffled(&self, seed: u64) -> Self {
        let mut samples = self.samples.clone();
        samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { samples, ..self.clone() }
    }
}
