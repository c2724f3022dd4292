//! Plane-stress finite-element analysis on a regular grid of unit square
//! bilinear elements, and SIMP compliance minimization driven by optimality
//! criteria updates.
//!
//! Node `(i, j)` sits at column `i` (0..=nelx, left to right) and row `j`
//! (0..=nely, top to bottom); its global index is `i * (nely + 1) + j` and it
//! owns DOFs `2n` (x) and `2n + 1` (y, positive upward). Element densities are
//! stored row-major with row 0 at the top.

mod linear;

use thiserror::Error;

pub use linear::{dense_solve_spd, LinearSolver};

/// Errors raised by the FEM and SIMP routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid boundary conditions: {0}")]
    InvalidBoundary(String),
    #[error("reduced stiffness matrix is singular (insufficient constraints)")]
    Singular,
    #[error("linear solve did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    SolverDiverged { residual: f64, iterations: usize },
    #[error("volume constraint cannot be met: {0}")]
    Constraint(String),
}

pub type Result<T> = std::result::Result<T, FemError>;

/// Rectangular design domain of unit square elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshSpec {
    pub nelx: usize,
    pub nely: usize,
    pub young_modulus: f64,
    pub poisson_ratio: f64,
}

impl MeshSpec {
    pub fn new(nelx: usize, nely: usize) -> Result<Self> {
        if nelx == 0 || nely == 0 {
            return Err(FemError::InvalidParameter(format!(
                "mesh must have at least one element per axis, got {nelx}x{nely}"
            )));
        }
        Ok(Self {
            nelx,
            nely,
            young_modulus: 1.0,
            poisson_ratio: 0.3,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.nelx * self.nely
    }

    pub fn n_nodes(&self) -> usize {
        (self.nelx + 1) * (self.nely + 1)
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn node(&self, col: usize, row: usize) -> usize {
        col * (self.nely + 1) + row
    }

    /// Global DOFs of element `(ex, ey)`, counter-clockwise from the
    /// lower-left node, x before y for each node.
    pub fn element_dofs(&self, ex: usize, ey: usize) -> [usize; 8] {
        let ll = self.node(ex, ey + 1);
        let lr = self.node(ex + 1, ey + 1);
        let ur = self.node(ex + 1, ey);
        let ul = self.node(ex, ey);
        [
            2 * ll,
            2 * ll + 1,
            2 * lr,
            2 * lr + 1,
            2 * ur,
            2 * ur + 1,
            2 * ul,
            2 * ul + 1,
        ]
    }

    /// Element DOF table in density order (row-major, top row first).
    pub fn dof_table(&self) -> Vec<[usize; 8]> {
        let mut table = Vec::with_capacity(self.n_elements());
        for ey in 0..self.nely {
            for ex in 0..self.nelx {
                table.push(self.element_dofs(ex, ey));
            }
        }
        table
    }

    pub fn element_stiffness(&self) -> Result<ElementMatrix> {
        element_stiffness(self.poisson_ratio, self.young_modulus)
    }
}

/// Default lower bound on element density.
pub const X_MIN: f64 = 1e-3;

/// SIMP problem data and optimizer controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimpParams {
    pub volfrac: f64,
    pub penal: f64,
    pub rmin: f64,
    pub x_min: f64,
    pub move_limit: f64,
    pub change_tol: f64,
    pub max_iters: usize,
}

impl SimpParams {
    pub fn new(volfrac: f64, penal: f64, rmin: f64) -> Result<Self> {
        let params = Self {
            volfrac,
            penal,
            rmin,
            x_min: X_MIN,
            move_limit: 0.2,
            change_tol: 0.01,
            max_iters: 200,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min > 0.0 && self.x_min <= self.volfrac && self.volfrac <= 1.0) {
            return Err(FemError::InvalidParameter(format!(
                "need 0 < x_min <= volfrac <= 1, got x_min={} volfrac={}",
                self.x_min, self.volfrac
            )));
        }
        if !(self.penal >= 1.0) {
            return Err(FemError::InvalidParameter(format!(
                "penalization must be >= 1, got {}",
                self.penal
            )));
        }
        if !(self.rmin > 0.0) {
            return Err(FemError::InvalidParameter(format!(
                "filter radius must be > 0, got {}",
                self.rmin
            )));
        }
        if !(self.move_limit > 0.0) || !(self.change_tol > 0.0) || self.max_iters == 0 {
            return Err(FemError::InvalidParameter(
                "move limit, change tolerance and iteration cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-element densities, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    nelx: usize,
    nely: usize,
    values: Vec<f64>,
}

impl DensityField {
    pub fn uniform(mesh: &MeshSpec, value: f64) -> Self {
        Self {
            nelx: mesh.nelx,
            nely: mesh.nely,
            values: vec![value; mesh.n_elements()],
        }
    }

    pub fn from_values(mesh: &MeshSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_elements() {
            return Err(FemError::Dimension {
                expected: mesh.n_elements(),
                found: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(FemError::InvalidParameter(format!(
                "density {v} outside (0, 1]"
            )));
        }
        Ok(Self {
            nelx: mesh.nelx,
            nely: mesh.nely,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn nelx(&self) -> usize {
        self.nelx
    }

    pub fn nely(&self) -> usize {
        self.nely
    }

    pub fn get(&self, ex: usize, ey: usize) -> f64 {
        self.values[ey * self.nelx + ex]
    }

    /// Current volume fraction V(x)/V0.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    fn check_mesh(&self, mesh: &MeshSpec) -> Result<()> {
        if self.nelx != mesh.nelx || self.nely != mesh.nely {
            return Err(FemError::Dimension {
                expected: mesh.n_elements(),
                found: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Supports and point loads.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConditions {
    pub fixed_dofs: Vec<usize>,
    pub loads: Vec<(usize, f64)>,
}

impl BoundaryConditions {
    /// Left edge clamped, unit downward load at the midpoint of the right
    /// edge. For odd `nely` the midpoint falls between two nodes and the
    /// upper one is used.
    pub fn cantilever(mesh: &MeshSpec) -> Self {
        let fixed_dofs = (0..=mesh.nely)
            .flat_map(|row| {
                let n = mesh.node(0, row);
                [2 * n, 2 * n + 1]
            })
            .collect();
        let row_from_bottom = (mesh.nely + 1) / 2;
        let load_node = mesh.node(mesh.nelx, mesh.nely - row_from_bottom);
        Self {
            fixed_dofs,
            loads: vec![(2 * load_node + 1, -1.0)],
        }
    }

    pub fn validate(&self, mesh: &MeshSpec) -> Result<()> {
        let ndof = mesh.n_dofs();
        if self.fixed_dofs.is_empty() {
            return Err(FemError::InvalidBoundary("no fixed DOFs".into()));
        }
        if let Some(d) = self.fixed_dofs.iter().find(|d| **d >= ndof) {
            return Err(FemError::InvalidBoundary(format!(
                "fixed DOF {d} out of range (mesh has {ndof})"
            )));
        }
        for &(dof, value) in &self.loads {
            if dof >= ndof {
                return Err(FemError::InvalidBoundary(format!(
                    "load DOF {dof} out of range (mesh has {ndof})"
                )));
            }
            if self.fixed_dofs.contains(&dof) {
                return Err(FemError::InvalidBoundary(format!(
                    "load applied to fixed DOF {dof}"
                )));
            }
            if !value.is_finite() {
                return Err(FemError::InvalidBoundary(format!(
                    "non-finite load on DOF {dof}"
                )));
            }
        }
        Ok(())
    }

    pub fn force_vector(&self, mesh: &MeshSpec) -> Vec<f64> {
        let mut f = vec![0.0; mesh.n_dofs()];
        for &(dof, value) in &self.loads {
            f[dof] += value;
        }
        f
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            fixed_dofs: self.fixed_dofs.clone(),
            loads: self.loads.iter().map(|&(d, v)| (d, v * factor)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub density: DensityField,
    pub compliance_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SolveResult {
    pub fn final_compliance(&self) -> f64 {
        self.compliance_history.last().copied().unwrap_or(f64::NAN)
    }
}

pub type ElementMatrix = [[f64; 8]; 8];

/// Stiffness of a unit bilinear quadrilateral in plane stress, integrated
/// with 2x2 Gauss points (exact for this element).
pub fn element_stiffness(nu: f64, e: f64) -> Result<ElementMatrix> {
    if !(0.0..0.5).contains(&nu) {
        return Err(FemError::InvalidParameter(format!(
            "Poisson ratio must lie in [0, 0.5), got {nu}"
        )));
    }
    if !(e > 0.0) || !e.is_finite() {
        return Err(FemError::InvalidParameter(format!(
            "Young's modulus must be positive, got {e}"
        )));
    }
    let c = e / (1.0 - nu * nu);
    let d = [
        [c, c * nu, 0.0],
        [c * nu, c, 0.0],
        [0.0, 0.0, c * (1.0 - nu) / 2.0],
    ];
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let g = 1.0 / 3f64.sqrt();
    let mut k = [[0.0; 8]; 8];
    for &(xi, eta) in &[(-g, -g), (g, -g), (g, g), (-g, g)] {
        // unit square: x = (1 + xi) / 2, so d/dx = 2 d/dxi and det J = 1/4
        let mut b = [[0.0; 8]; 3];
        for (a, &(xa, ya)) in corners.iter().enumerate() {
            let dndx = 2.0 * 0.25 * xa * (1.0 + eta * ya);
            let dndy = 2.0 * 0.25 * ya * (1.0 + xi * xa);
            b[0][2 * a] = dndx;
            b[1][2 * a + 1] = dndy;
            b[2][2 * a] = dndy;
            b[2][2 * a + 1] = dndx;
        }
        let mut db = [[0.0; 8]; 3];
        for r in 0..3 {
            for col in 0..8 {
                db[r][col] = (0..3).map(|s| d[r][s] * b[s][col]).sum();
            }
        }
        for i in 0..8 {
            for j in 0..8 {
                k[i][j] += 0.25 * (0..3).map(|r| b[r][i] * db[r][j]).sum::<f64>();
            }
        }
    }
    // enforce exact symmetry against rounding
    for i in 0..8 {
        for j in 0..i {
            let avg = 0.5 * (k[i][j] + k[j][i]);
            k[i][j] = avg;
            k[j][i] = avg;
        }
    }
    Ok(k)
}

fn gather(u: &[f64], dofs: &[usize; 8]) -> [f64; 8] {
    let mut ue = [0.0; 8];
    for (slot, &d) in ue.iter_mut().zip(dofs) {
        *slot = u[d];
    }
    ue
}

fn quad_form(k: &ElementMatrix, ue: &[f64; 8]) -> f64 {
    let mut acc = 0.0;
    for i in 0..8 {
        let mut row = 0.0;
        for j in 0..8 {
            row += k[i][j] * ue[j];
        }
        acc += ue[i] * row;
    }
    acc
}

/// Solves `K U = F` with element stiffness scaled by `x_e^p`, choosing the
/// solver automatically.
pub fn assemble_and_solve(
    density: &DensityField,
    penal: f64,
    mesh: &MeshSpec,
    bc: &BoundaryConditions,
) -> Result<Vec<f64>> {
    assemble_and_solve_with(density, penal, mesh, bc, LinearSolver::Auto)
}

pub fn assemble_and_solve_with(
    density: &DensityField,
    penal: f64,
    mesh: &MeshSpec,
    bc: &BoundaryConditions,
    solver: LinearSolver,
) -> Result<Vec<f64>> {
    density.check_mesh(mesh)?;
    bc.validate(mesh)?;
    let ke = mesh.element_stiffness()?;
    let scale: Vec<f64> = density.values.iter().map(|x| x.powf(penal)).collect();
    linear::solve(mesh, &ke, &scale, bc, solver)
}

fn element_energies(
    density: &DensityField,
    u: &[f64],
    mesh: &MeshSpec,
) -> Result<Vec<f64>> {
    density.check_mesh(mesh)?;
    if u.len() != mesh.n_dofs() {
        return Err(FemError::Dimension {
            expected: mesh.n_dofs(),
            found: u.len(),
        });
    }
    let ke = mesh.element_stiffness()?;
    Ok(mesh
        .dof_table()
        .iter()
        .map(|dofs| quad_form(&ke, &gather(u, dofs)))
        .collect())
}

/// `c = sum_e x_e^p u_e^T k0 u_e`.
pub fn compliance(density: &DensityField, u: &[f64], penal: f64, mesh: &MeshSpec) -> Result<f64> {
    let energies = element_energies(density, u, mesh)?;
    Ok(density
        .values
        .iter()
        .zip(&energies)
        .map(|(x, ue)| x.powf(penal) * ue)
        .sum())
}

/// `dc/dx_e = -p x_e^(p-1) u_e^T k0 u_e`.
pub fn sensitivities(
    density: &DensityField,
    u: &[f64],
    penal: f64,
    mesh: &MeshSpec,
) -> Result<Vec<f64>> {
    let energies = element_energies(density, u, mesh)?;
    Ok(density
        .values
        .iter()
        .zip(&energies)
        .map(|(x, ue)| -penal * x.powf(penal - 1.0) * ue)
        .collect())
}

/// Mesh-independency filter on the sensitivities, with cone weights
/// `max(0, rmin - dist)` between element centres.
pub fn filter_sensitivities(
    density: &DensityField,
    dc: &[f64],
    rmin: f64,
    mesh: &MeshSpec,
) -> Result<Vec<f64>> {
    density.check_mesh(mesh)?;
    if dc.len() != mesh.n_elements() {
        return Err(FemError::Dimension {
            expected: mesh.n_elements(),
            found: dc.len(),
        });
    }
    if !(rmin > 0.0) {
        return Err(FemError::InvalidParameter(format!(
            "filter radius must be > 0, got {rmin}"
        )));
    }
    let (nelx, nely) = (mesh.nelx as isize, mesh.nely as isize);
    let reach = rmin.ceil() as isize;
    let x = &density.values;
    let mut out = vec![0.0; dc.len()];
    for ey in 0..nely {
        for ex in 0..nelx {
            let mut weighted = 0.0;
            let mut weight_sum = 0.0;
            for ky in (ey - reach).max(0)..=(ey + reach).min(nely - 1) {
                for kx in (ex - reach).max(0)..=(ex + reach).min(nelx - 1) {
                    let dist = (((ex - kx).pow(2) + (ey - ky).pow(2)) as f64).sqrt();
                    let h = rmin - dist;
                    if h > 0.0 {
                        let k = (ky * nelx + kx) as usize;
                        weighted += h * x[k] * dc[k];
                        weight_sum += h;
                    }
                }
            }
            let e = (ey * nelx + ex) as usize;
            out[e] = weighted / (x[e] * weight_sum);
        }
    }
    Ok(out)
}

/// Lower bisection bound for the Lagrange multiplier.
const LAMBDA_LO: f64 = 1e-9;
/// Upper bisection bound for the Lagrange multiplier.
const LAMBDA_HI: f64 = 1e9;

fn oc_candidate(x: &[f64], dc: &[f64], lambda: f64, params: &SimpParams, out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for ((o, &xe), &g) in out.iter_mut().zip(x).zip(dc) {
        let lo = params.x_min.max(xe - params.move_limit);
        let hi = 1.0f64.min(xe + params.move_limit);
        let trial = xe * ((-g).max(0.0) / lambda).sqrt();
        *o = trial.clamp(lo, hi);
        sum += *o;
    }
    sum / x.len() as f64
}

/// Optimality-criteria update: `x_e (-dc_e / lambda)^0.5` clamped to the
/// move limit and density bounds, with `lambda` bisected so the volume
/// constraint holds.
pub fn oc_update(density: &DensityField, dc: &[f64], params: &SimpParams) -> Result<DensityField> {
    params.validate()?;
    if dc.len() != density.values.len() {
        return Err(FemError::Dimension {
            expected: density.values.len(),
            found: dc.len(),
        });
    }
    let x = &density.values;
    let f = params.volfrac;
    let mut buf = vec![0.0; x.len()];
    let vol_lo_lambda = oc_candidate(x, dc, LAMBDA_LO, params, &mut buf);
    let vol_hi_lambda = oc_candidate(x, dc, LAMBDA_HI, params, &mut buf);
    if vol_lo_lambda < f - 1e-4 || vol_hi_lambda > f + 1e-4 {
        return Err(FemError::Constraint(format!(
            "volume fraction {f} not reachable within move limit (range {vol_hi_lambda:.4}..{vol_lo_lambda:.4})"
        )));
    }
    let (mut l1, mut l2) = (LAMBDA_LO, LAMBDA_HI);
    while (l2 - l1) / (l1 + l2) > 1e-6 {
        let mid = 0.5 * (l1 + l2);
        if oc_candidate(x, dc, mid, params, &mut buf) > f {
            l1 = mid;
        } else {
            l2 = mid;
        }
    }
    oc_candidate(x, dc, 0.5 * (l1 + l2), params, &mut buf);
    Ok(DensityField {
        nelx: density.nelx,
        nely: density.nely,
        values: buf,
    })
}

/// Full SIMP loop: solve, compliance, sensitivities, filter, OC update,
/// until the largest density change drops below `change_tol`.
pub fn run_simp(mesh: &MeshSpec, params: &SimpParams, bc: &BoundaryConditions) -> Result<SolveResult> {
    params.validate()?;
    bc.validate(mesh)?;
    let mut density = DensityField::uniform(mesh, params.volfrac);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iters {
        iterations += 1;
        let u = assemble_and_solve(&density, params.penal, mesh, bc)?;
        history.push(compliance(&density, &u, params.penal, mesh)?);
        let dc = sensitivities(&density, &u, params.penal, mesh)?;
        let dc = filter_sensitivities(&density, &dc, params.rmin, mesh)?;
        let next = oc_update(&density, &dc, params)?;
        let change = next
            .values
            .iter()
            .zip(&density.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        density = next;
        log::debug!(
            "simp iter {iterations}: c={:.5} vol={:.4} change={change:.4}",
            history.last().unwrap(),
            density.mean()
        );
        if change < params.change_tol {
            converged = true;
            break;
        }
    }
    Ok(SolveResult {
        density,
        compliance_history: history,
        iterations,
        converged,
    })
}
