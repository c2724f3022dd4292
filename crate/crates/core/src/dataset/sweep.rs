use rayon::prelude::*;

use super::{Condition, ConditionKind, ConditionedSample, Dataset, DatasetError, Result, SampleMeta};
use crate::fem::{run_simp, BoundaryConditions, MeshSpec, SimpParams};

/// Cartesian grid of SIMP settings. Values are taken as given; no spacing
/// is inferred.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub volfracs: Vec<f64>,
    pub penals: Vec<f64>,
    pub rmins: Vec<f64>,
    pub mesh: MeshSpec,
}

impl SweepGrid {
    pub const VOLFRAC_RANGE: (f64, f64) = (0.3, 0.8);
    pub const PENAL_RANGE: (f64, f64) = (2.0, 4.0);
    pub const RMIN_RANGE: (f64, f64) = (1.5, 3.0);

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, values: &[f64], (lo, hi): (f64, f64)| {
            if values.is_empty() {
                return Err(DatasetError::InvalidParameter(format!("empty {name} list")));
            }
            match values.iter().find(|v| !(lo..=hi).contains(*v)) {
                Some(v) => Err(DatasetError::InvalidParameter(format!(
                    "{name} value {v} outside [{lo}, {hi}]"
                ))),
                None => Ok(()),
            }
        };
        check("volfrac", &self.volfracs, Self::VOLFRAC_RANGE)?;
        check("penal", &self.penals, Self::PENAL_RANGE)?;
        check("rmin", &self.rmins, Self::RMIN_RANGE)?;
        Ok(())
    }

    /// Grid points in sweep order: volfrac-major, then penal, then rmin.
    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        let mut pts = Vec::with_capacity(self.len());
        for &v in &self.volfracs {
            for &p in &self.penals {
                for &r in &self.rmins {
                    pts.push((v, p, r));
                }
            }
        }
        pts
    }

    pub fn len(&self) -> usize {
        self.volfracs.len() * self.penals.len() * self.rmins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One SIMP run per grid point; runs execute in parallel but samples are
/// returned in [`SweepGrid::points`] order. Runs that hit the iteration cap
/// are kept with `converged = false`.
pub fn sweep_generate(grid: &SweepGrid, bc: &BoundaryConditions) -> Result<Dataset> {
    grid.validate()?;
    let mesh = grid.mesh;
    let samples = grid
        .points()
        .into_par_iter()
        .map(|(volfrac, penal, rmin)| {
            let params = SimpParams::new(volfrac, penal, rmin)?;
            let res = run_simp(&mesh, &params, bc)?;
            if !res.converged {
                log::warn!(
                    "SIMP run volfrac={volfrac} penal={penal} rmin={rmin} stopped after {} iterations without converging",
                    res.iterations
                );
            }
            let compliance = res.final_compliance();
            Ok(ConditionedSample {
                image: res.density.values().iter().map(|&v| v as f32).collect(),
                condition: Condition::Continuous(volfrac as f32),
                meta: SampleMeta {
                    volfrac: volfrac as f32,
                    penal: penal as f32,
                    rmin: rmin as f32,
                    compliance: compliance as f32,
                    converged: res.converged,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_samples(mesh.nelx, mesh.nely, ConditionKind::Continuous, samples)
}
