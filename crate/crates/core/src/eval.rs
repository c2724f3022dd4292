//! Conditional-fidelity evaluation of trained generators and FEM re-analysis
//! of generated structures.

use serde::{Deserialize, Serialize};

use crate::dataset::{class_target, postprocess, Condition, DatasetError};
use crate::fem::{assemble_and_solve, compliance, BoundaryConditions, DensityField, FemError, MeshSpec, X_MIN};
use crate::image::Grid;
use crate::train::{sample, Checkpoint, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("invalid request: {0}")]
    Request(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Volume fraction of an image: its mean pixel value.
pub fn measure_volfrac(image: &Grid) -> f64 {
    image.mean()
}

/// Volume fraction a condition asks for. Class `k` of `K` maps to the
/// synthetic dataset's target `(k + 1) / (K + 1)`.
pub fn condition_target(c: &Condition) -> f64 {
    match *c {
        Condition::Continuous(v) => v as f64,
        Condition::Class { index, cardinality } => class_target(index as usize, cardinality as usize),
    }
}

/// Compliance of `image` read as a density field (row 0 at the top), with
/// pixels clamped into `[X_MIN, 1]`.
pub fn reanalyze(image: &Grid, bc: &BoundaryConditions, penal: f64) -> std::result::Result<f64, FemError> {
    let mesh = MeshSpec::new(image.width, image.height)?;
    let values = image.data.iter().map(|v| if v.is_nan() { X_MIN } else { v.clamp(X_MIN, 1.0) }).collect();
    let density = DensityField::from_values(&mesh, values)?;
    let u = assemble_and_solve(&density, penal, &mesh, bc)?;
    compliance(&density, &u, penal, &mesh)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRequest {
    pub condition: Condition,
    pub count: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// When set, every post-processed sample is re-analysed on a cantilever
    /// with this penalization.
    pub compliance_penal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target: f64,
    pub count: usize,
    pub mean_vf: f64,
    pub mean_abs_err: f64,
    pub std_abs_err: f64,
    pub frac_within_tol: f64,
    pub tolerance: f64,
    pub per_sample: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub compliance: Option<Vec<f64>>,
    pub objective: String,
    pub checkpoint: String,
    pub seed: u64,
}

impl EvalReport {
    /// Aggregates measured volume fractions against `target`.
    pub fn from_measurements(target: f64, per_sample: Vec<f64>, tolerance: f64) -> Self {
        let n = per_sample.len();
        let errs: Vec<f64> = per_sample.iter().map(|v| (v - target).abs()).collect();
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let mean_abs_err = mean(&errs);
        let var = mean(&errs.iter().map(|e| (e - mean_abs_err).powi(2)).collect::<Vec<_>>());
        Self {
            target,
            count: n,
            mean_vf: mean(&per_sample),
            mean_abs_err,
            std_abs_err: var.sqrt(),
            frac_within_tol: if n == 0 { 0.0 } else { errs.iter().filter(|&&e| e <= tolerance).count() as f64 / n as f64 },
            tolerance,
            per_sample,
            compliance: None,
            objective: String::new(),
            checkpoint: String::new(),
            seed: 0,
        }
    }
}

/// Samples `req.count` images at `req.condition`, post-processes them and
/// measures their volume fractions. `checkpoint_id` only labels the report.
pub fn conditional_eval(ck: &Checkpoint, checkpoint_id: &str, req: &EvalRequest) -> Result<EvalReport> {
    if !(req.tolerance >= 0.0) {
        return Err(EvalError::Request(format!("tolerance must be non-negative, got {}", req.tolerance)));
    }
    let images = sample(ck, req.condition, req.count, req.seed)?;
    let processed = images.iter().map(postprocess).collect::<std::result::Result<Vec<_>, _>>()?;
    let per_sample = processed.iter().map(measure_volfrac).collect();
    let mut report = EvalReport::from_measurements(condition_target(&req.condition), per_sample, req.tolerance);
    if let Some(penal) = req.compliance_penal {
        let c = processed
            .iter()
            .map(|img| {
                let mesh = MeshSpec::new(img.width, img.height)?;
                reanalyze(img, &BoundaryConditions::cantilever(&mesh), penal)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        report.compliance = Some(c);
    }
    report.objective = crate::kv::parse_kv(&ck.config)
        .ok()
        .and_then(|kv| kv.into_iter().find(|(k, _)| k == "objective").map(|(_, v)| v))
        .unwrap_or_default();
    report.checkpoint = checkpoint_id.to_string();
    report.seed = req.seed;
    Ok(report)
}
