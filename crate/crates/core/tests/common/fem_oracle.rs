//! Independent FEM reference computations for tiny meshes: a 3x3-point
//! quadrature element matrix, explicit global assembly, and Gaussian
//! elimination with partial pivoting.

use topogan::fem::{BoundaryConditions, MeshSpec};

/// Plane-stress bilinear element on the unit square, integrated with a
/// 3x3 Gauss rule. Local node order: (0,0), (1,0), (1,1), (0,1).
pub fn element_matrix(nu: f64, e: f64) -> [[f64; 8]; 8] {
    let c = e / (1.0 - nu * nu);
    let d = [[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, c * (1.0 - nu) / 2.0]];
    let pts = [(0.5 - 0.5 * (0.6f64).sqrt(), 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + 0.5 * (0.6f64).sqrt(), 5.0 / 18.0)];
    // shape function gradients in physical coordinates on [0,1]^2
    let grads = |x: f64, y: f64| -> [(f64, f64); 4] {
        [(-(1.0 - y), -(1.0 - x)), (1.0 - y, -x), (y, x), (-y, 1.0 - x)]
    };
    let mut k = [[0.0; 8]; 8];
    for &(x, wx) in &pts {
        for &(y, wy) in &pts {
            let g = grads(x, y);
            let mut b = [[0.0; 8]; 3];
            for a in 0..4 {
                b[0][2 * a] = g[a].0;
                b[1][2 * a + 1] = g[a].1;
                b[2][2 * a] = g[a].1;
                b[2][2 * a + 1] = g[a].0;
            }
            for i in 0..8 {
                for j in 0..8 {
                    let mut s = 0.0;
                    for r in 0..3 {
                        for q in 0..3 {
                            s += b[r][i] * d[r][q] * b[q][j];
                        }
                    }
                    k[i][j] += wx * wy * s;
                }
            }
        }
    }
    k
}

/// Nodes of element (ex, ey) counter-clockwise from lower-left, computed
/// from coordinates rather than the library's DOF table.
fn element_nodes(mesh: &MeshSpec, ex: usize, ey: usize) -> [usize; 4] {
    let id = |col: usize, row: usize| col * (mesh.nely + 1) + row;
    [id(ex, ey + 1), id(ex + 1, ey + 1), id(ex + 1, ey), id(ex, ey)]
}

pub fn global_stiffness(mesh: &MeshSpec, density: &[f64], penal: f64) -> Vec<Vec<f64>> {
    let n = mesh.n_dofs();
    let ke = element_matrix(mesh.poisson_ratio, mesh.young_modulus);
    let mut k = vec![vec![0.0; n]; n];
    for ey in 0..mesh.nely {
        for ex in 0..mesh.nelx {
            let s = density[ey * mesh.nelx + ex].powf(penal);
            let nodes = element_nodes(mesh, ex, ey);
            for (a, &na) in nodes.iter().enumerate() {
                for (b, &nb) in nodes.iter().enumerate() {
                    for da in 0..2 {
                        for db in 0..2 {
                            k[2 * na + da][2 * nb + db] += s * ke[2 * a + da][2 * b + db];
                        }
                    }
                }
            }
        }
    }
    k
}

pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Displacements by dense elimination on the reduced system.
pub fn displacements(mesh: &MeshSpec, density: &[f64], penal: f64, bc: &BoundaryConditions) -> Vec<f64> {
    let k = global_stiffness(mesh, density, penal);
    let n = mesh.n_dofs();
    let mut f = vec![0.0; n];
    for &(d, v) in &bc.loads {
        f[d] += v;
    }
    let free: Vec<usize> = (0..n).filter(|d| !bc.fixed_dofs.contains(d)).collect();
    let a: Vec<Vec<f64>> = free.iter().map(|&i| free.iter().map(|&j| k[i][j]).collect()).collect();
    let rhs: Vec<f64> = free.iter().map(|&i| f[i]).collect();
    let x = gauss_solve(a, rhs);
    let mut u = vec![0.0; n];
    for (i, &d) in free.iter().enumerate() {
        u[d] = x[i];
    }
    u
}

/// Compliance as U^T K U with the oracle's own global matrix.
pub fn compliance(mesh: &MeshSpec, density: &[f64], penal: f64, bc: &BoundaryConditions) -> f64 {
    let u = displacements(mesh, density, penal, bc);
    let k = global_stiffness(mesh, density, penal);
    let n = u.len();
    (0..n).map(|i| u[i] * (0..n).map(|j| k[i][j] * u[j]).sum::<f64>()).sum()
}

/// O(N^2) sensitivity filter over every element pair.
pub fn filter_brute(nelx: usize, nely: usize, x: &[f64], dc: &[f64], rmin: f64) -> Vec<f64> {
    let n = nelx * nely;
    (0..n)
        .map(|e| {
            let (ex, ey) = ((e % nelx) as f64, (e / nelx) as f64);
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                let (ix, iy) = ((i % nelx) as f64, (i / nelx) as f64);
                let h = (rmin - ((ex - ix).powi(2) + (ey - iy).powi(2)).sqrt()).max(0.0);
                num += h * x[i] * dc[i];
                den += h;
            }
            num / (x[e] * den)
        })
        .collect()
}
