use super::{ElementMatrix, FemError, MeshSpec, Result};
use crate::fem::BoundaryConditions;

/// Reduced systems with fewer free DOFs than this are factorized directly
/// under [`LinearSolver::Auto`].
pub const DENSE_DOF_LIMIT: usize = 200;

const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// Dense Cholesky below [`DENSE_DOF_LIMIT`] free DOFs, PCG above.
    #[default]
    Auto,
    /// Jacobi-preconditioned conjugate gradients, matrix-free.
    Pcg,
    /// Dense Cholesky on the assembled reduced matrix.
    Dense,
}

struct Reduced {
    /// full DOF -> free index
    map: Vec<Option<usize>>,
    free: Vec<usize>,
}

impl Reduced {
    fn new(ndof: usize, fixed: &[usize]) -> Self {
        let mut is_fixed = vec![false; ndof];
        for &d in fixed {
            is_fixed[d] = true;
        }
        let mut map = vec![None; ndof];
        let mut free = Vec::new();
        for d in 0..ndof {
            if !is_fixed[d] {
                map[d] = Some(free.len());
                free.push(d);
            }
        }
        Self { map, free }
    }
}

pub(super) fn solve(
    mesh: &MeshSpec,
    ke: &ElementMatrix,
    scale: &[f64],
    bc: &BoundaryConditions,
    solver: LinearSolver,
) -> Result<Vec<f64>> {
    let ndof = mesh.n_dofs();
    let red = Reduced::new(ndof, &bc.fixed_dofs);
    let f_full = bc.force_vector(mesh);
    let b: Vec<f64> = red.free.iter().map(|&d| f_full[d]).collect();
    let mut u = vec![0.0; ndof];
    if b.iter().all(|v| *v == 0.0) {
        return Ok(u);
    }
    let table = mesh.dof_table();
    let op = ReducedOperator {
        table: &table,
        ke,
        scale,
        red: &red,
    };
    let use_dense = match solver {
        LinearSolver::Dense => true,
        LinearSolver::Pcg => false,
        LinearSolver::Auto => red.free.len() < DENSE_DOF_LIMIT,
    };
    let x = if use_dense {
        let mut a = op.assemble_dense();
        dense_solve_spd(&mut a, red.free.len(), &b)?
    } else {
        pcg(&op, &b)?
    };
    let residual = op.relative_residual(&x, &b);
    if !(residual <= RESIDUAL_TOL) {
        return Err(FemError::SolverDiverged {
            residual,
            iterations: 0,
        });
    }
    for (i, &d) in red.free.iter().enumerate() {
        u[d] = x[i];
    }
    Ok(u)
}

struct ReducedOperator<'a> {
    table: &'a [[usize; 8]],
    ke: &'a ElementMatrix,
    scale: &'a [f64],
    red: &'a Reduced,
}

impl ReducedOperator<'_> {
    fn n(&self) -> usize {
        self.red.free.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (dofs, &s) in self.table.iter().zip(self.scale) {
            let mut ue = [0.0; 8];
            let mut idx = [None; 8];
            for a in 0..8 {
                idx[a] = self.red.map[dofs[a]];
                if let Some(i) = idx[a] {
                    ue[a] = x[i];
                }
            }
            for a in 0..8 {
                if let Some(i) = idx[a] {
                    let row = &self.ke[a];
                    let mut acc = 0.0;
                    for b in 0..8 {
                        acc += row[b] * ue[b];
                    }
                    y[i] += s * acc;
                }
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n()];
        for (dofs, &s) in self.table.iter().zip(self.scale) {
            for a in 0..8 {
                if let Some(i) = self.red.map[dofs[a]] {
                    d[i] += s * self.ke[a][a];
                }
            }
        }
        d
    }

    fn assemble_dense(&self) -> Vec<f64> {
        let n = self.n();
        let mut k = vec![0.0; n * n];
        for (dofs, &s) in self.table.iter().zip(self.scale) {
            for a in 0..8 {
                let Some(i) = self.red.map[dofs[a]] else { continue };
                for b in 0..8 {
                    if let Some(j) = self.red.map[dofs[b]] {
                        k[i * n + j] += s * self.ke[a][b];
                    }
                }
            }
        }
        k
    }

    fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.n()];
        self.apply(x, &mut ax);
        let r: f64 = ax.iter().zip(b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        r / norm(b)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pcg(op: &ReducedOperator<'_>, b: &[f64]) -> Result<Vec<f64>> {
    let n = op.n();
    let inv_diag: Vec<f64> = op
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 0.0 })
        .collect();
    if inv_diag.iter().any(|v| *v == 0.0) {
        return Err(FemError::Singular);
    }
    let b_norm = norm(b);
    // iterate a little past the contract so the final true residual clears it
    let tol = 0.1 * RESIDUAL_TOL * b_norm;
    let max_iters = 20 * n + 100;
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 0..max_iters {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(FemError::Singular);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let r_norm = norm(&r);
        if r_norm <= tol {
            log::trace!("pcg converged in {} iterations", it + 1);
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(FemError::SolverDiverged {
        residual: norm(&r) / b_norm,
        iterations: max_iters,
    })
}

/// In-place Cholesky solve of a dense symmetric positive-definite system
/// stored row-major in `a` (`n * n`). A pivot that collapses relative to the
/// largest diagonal entry is reported as [`FemError::Singular`].
pub fn dense_solve_spd(a: &mut [f64], n: usize, b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != n * n || b.len() != n {
        return Err(FemError::Dimension {
            expected: n * n,
            found: a.len(),
        });
    }
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let floor = 1e-12 * max_diag;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > floor) {
            return Err(FemError::Singular);
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Ok(y)
}
