mod common;

use common::fem_oracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topogan::fem::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn element_stiffness_matches_quadrature_oracle() {
    let k = element_stiffness(0.3, 1.0).unwrap();
    let oracle = fem_oracle::element_matrix(0.3, 1.0);
    for i in 0..8 {
        for j in 0..8 {
            assert!((k[i][j] - oracle[i][j]).abs() < 1e-12, "({i},{j})");
        }
    }
    // closed form of the diagonal entry for the unit square
    let k00 = (0.5 - 0.3 / 6.0) / (1.0 - 0.09);
    assert!((k[0][0] - k00).abs() < 1e-12);
}

#[test]
fn single_element_matches_dense_oracle() {
    let mesh = MeshSpec::new(1, 1).unwrap();
    let bc = BoundaryConditions {
        fixed_dofs: (0..=1).flat_map(|r| [2 * mesh.node(0, r), 2 * mesh.node(0, r) + 1]).collect(),
        loads: vec![(2 * mesh.node(1, 1) + 1, -1.0)],
    };
    let d = DensityField::uniform(&mesh, 1.0);
    let oracle = fem_oracle::displacements(&mesh, d.values(), 3.0, &bc);
    for solver in [LinearSolver::Auto, LinearSolver::Dense, LinearSolver::Pcg] {
        let u = assemble_and_solve_with(&d, 3.0, &mesh, &bc, solver).unwrap();
        for (a, b) in u.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{solver:?}: {a} vs {b}");
        }
    }
}

#[test]
fn cantilever_2x2_compliance_matches_oracle() {
    let mesh = MeshSpec::new(2, 2).unwrap();
    let bc = BoundaryConditions::cantilever(&mesh);
    let d = DensityField::uniform(&mesh, 0.5);
    let u = assemble_and_solve(&d, 3.0, &mesh, &bc).unwrap();
    let c = compliance(&d, &u, 3.0, &mesh).unwrap();
    let oracle = fem_oracle::compliance(&mesh, d.values(), 3.0, &bc);
    assert!(rel(c, oracle) < 1e-10, "{c} vs {oracle}");
}

#[test]
fn random_4x3_element_sum_equals_load_work() {
    let mesh = MeshSpec::new(4, 3).unwrap();
    let bc = BoundaryConditions::cantilever(&mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let d = DensityField::from_values(&mesh, (0..12).map(|_| rng.random_range(0.1..1.0)).collect()).unwrap();
    let u = assemble_and_solve(&d, 3.0, &mesh, &bc).unwrap();
    let c = compliance(&d, &u, 3.0, &mesh).unwrap();
    let work: f64 = bc.force_vector(&mesh).iter().zip(&u).map(|(f, u)| f * u).sum();
    assert!(rel(c, work) < 1e-8);
}

#[test]
fn pcg_residual_contract_on_larger_mesh() {
    let mesh = MeshSpec::new(40, 20).unwrap();
    let bc = BoundaryConditions::cantilever(&mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = DensityField::from_values(&mesh, (0..800).map(|_| rng.random_range(1e-3..1.0)).collect()).unwrap();
    let u = assemble_and_solve_with(&d, 3.0, &mesh, &bc, LinearSolver::Pcg).unwrap();
    // recompute the residual with the independent global matrix
    let k = fem_oracle::global_stiffness(&mesh, d.values(), 3.0);
    let f = bc.force_vector(&mesh);
    let free: Vec<usize> = (0..mesh.n_dofs()).filter(|i| !bc.fixed_dofs.contains(i)).collect();
    let mut r2 = 0.0;
    let mut f2 = 0.0;
    for &i in &free {
        let ku: f64 = (0..mesh.n_dofs()).map(|j| k[i][j] * u[j]).sum();
        r2 += (ku - f[i]).powi(2);
        f2 += f[i].powi(2);
    }
    assert!((r2 / f2).sqrt() <= 1e-8);
}

#[test]
fn sensitivities_match_central_differences() {
    let mesh = MeshSpec::new(6, 4).unwrap();
    let bc = BoundaryConditions::cantilever(&mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let values: Vec<f64> = (0..24).map(|_| rng.random_range(0.2..1.0)).collect();
    let d = DensityField::from_values(&mesh, values.clone()).unwrap();
    let u = assemble_and_solve(&d, 3.0, &mesh, &bc).unwrap();
    let dc = sensitivities(&d, &u, 3.0, &mesh).unwrap();
    let h = 1e-6;
    let c_at = |v: Vec<f64>| {
        let d = DensityField::from_values(&mesh, v).unwrap();
        let u = assemble_and_solve(&d, 3.0, &mesh, &bc).unwrap();
        compliance(&d, &u, 3.0, &mesh).unwrap()
    };
    for e in 0..24 {
        let mut plus = values.clone();
        plus[e] += h;
        let mut minus = values.clone();
        minus[e] -= h;
        let fd = (c_at(plus) - c_at(minus)) / (2.0 * h);
        assert!(rel(dc[e], fd) < 1e-4, "element {e}: {} vs {fd}", dc[e]);
    }
}

#[test]
fn filter_matches_brute_force() {
    let mesh = MeshSpec::new(3, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..9).map(|_| rng.random_range(0.01..1.0)).collect();
    let dc: Vec<f64> = (0..9).map(|_| -rng.random_range(0.0..3.0)).collect();
    let d = DensityField::from_values(&mesh, x.clone()).unwrap();
    let got = filter_sensitivities(&d, &dc, 1.5, &mesh).unwrap();
    let want = fem_oracle::filter_brute(3, 3, &x, &dc, 1.5);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
    // non-square mesh, larger radius
    let mesh = MeshSpec::new(7, 4).unwrap();
    let x: Vec<f64> = (0..28).map(|_| rng.random_range(0.01..1.0)).collect();
    let dc: Vec<f64> = (0..28).map(|_| -rng.random_range(0.0..3.0)).collect();
    let d = DensityField::from_values(&mesh, x.clone()).unwrap();
    let got = filter_sensitivities(&d, &dc, 2.7, &mesh).unwrap();
    let want = fem_oracle::filter_brute(7, 4, &x, &dc, 2.7);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// Scans the multiplier on a fine log grid and returns the volume just
/// above and just below the target.
fn multiplier_scan(x: &[f64], dc: &[f64], p: &SimpParams) -> (f64, f64) {
    let vol = |lambda: f64| {
        x.iter()
            .zip(dc)
            .map(|(&xe, &g)| {
                let lo = p.x_min.max(xe - p.move_limit);
                let hi = (xe + p.move_limit).min(1.0);
                (xe * (-g / lambda).sqrt()).clamp(lo, hi)
            })
            .sum::<f64>()
            / x.len() as f64
    };
    let steps = 400_000;
    let mut prev = vol(1e-9);
    for i in 1..=steps {
        let lambda = 10f64.powf(-9.0 + 18.0 * i as f64 / steps as f64);
        let v = vol(lambda);
        if v <= p.volfrac {
            return (prev, v);
        }
        prev = v;
    }
    panic!("no crossing");
}

#[test]
fn oc_volume_matches_multiplier_scan() {
    let mesh = MeshSpec::new(4, 4).unwrap();
    let params = SimpParams::new(0.5, 3.0, 1.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x: Vec<f64> = (0..16).map(|_| rng.random_range(0.3..0.7)).collect();
    let dc: Vec<f64> = (0..16).map(|_| -rng.random_range(0.05..2.0)).collect();
    let d = DensityField::from_values(&mesh, x.clone()).unwrap();
    let out = oc_update(&d, &dc, &params).unwrap();
    let (above, below) = multiplier_scan(&x, &dc, &params);
    assert!(above >= 0.5 && below <= 0.5);
    assert!(above - below < 1e-3, "scan too coarse: {above} {below}");
    assert!((out.mean() - 0.5).abs() <= 1e-4);
    assert!(out.mean() <= above + 1e-12 && out.mean() >= below - 1e-12);
}

#[test]
fn cantilever_20x10_converges_to_volume() {
    let mesh = MeshSpec::new(20, 10).unwrap();
    let params = SimpParams::new(0.5, 3.0, 1.5).unwrap();
    let bc = BoundaryConditions::cantilever(&mesh);
    let res = run_simp(&mesh, &params, &bc).unwrap();
    assert!(res.converged, "{} iterations", res.iterations);
    assert!(res.iterations <= 200);
    assert!((res.density.mean() - 0.5).abs() <= 1e-3);
    assert_eq!(res.compliance_history.len(), res.iterations);
    assert!(res.final_compliance() < res.compliance_history[0]);
    // material gathers at the clamped edge: the left column is denser than the free tip
    let col_mean = |ex: usize| (0..10).map(|ey| res.density.get(ex, ey)).sum::<f64>() / 10.0;
    assert!(col_mean(0) > col_mean(19));
}

#[test]
fn unpenalized_unfiltered_compliance_descends() {
    let mesh = MeshSpec::new(12, 6).unwrap();
    let mut params = SimpParams::new(0.5, 1.0, 0.5).unwrap();
    params.max_iters = 40;
    let res = run_simp(&mesh, &params, &BoundaryConditions::cantilever(&mesh)).unwrap();
    let h = &res.compliance_history;
    assert!(h.last().unwrap() <= &h[0]);
    for w in h[1..].windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", h);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stiffness_is_positive_semidefinite(v in prop::collection::vec(-10.0f64..10.0, 8), nu in 0.0f64..0.49) {
        let k = element_stiffness(nu, 1.0).unwrap();
        let q: f64 = (0..8).map(|i| v[i] * (0..8).map(|j| k[i][j] * v[j]).sum::<f64>()).sum();
        prop_assert!(q >= -1e-12);
    }

    #[test]
    fn oc_update_keeps_bounds_and_volume(seed in 0u64..1000, f in 0.3f64..0.7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = MeshSpec::new(5, 4).unwrap();
        let params = SimpParams::new(f, 3.0, 1.5).unwrap();
        let x: Vec<f64> = (0..20).map(|_| (f + rng.random_range(-0.1..0.1)).clamp(1e-3, 1.0)).collect();
        let dc: Vec<f64> = (0..20).map(|_| -rng.random_range(1e-3..10.0)).collect();
        let d = DensityField::from_values(&mesh, x).unwrap();
        let out = oc_update(&d, &dc, &params).unwrap();
        prop_assert!((out.mean() - f).abs() <= 1e-4);
        for (n, o) in out.values().iter().zip(d.values()) {
            prop_assert!(*n >= params.x_min && *n <= 1.0);
            prop_assert!((n - o).abs() <= params.move_limit + 1e-12);
        }
    }

    #[test]
    fn adjoint_matches_finite_differences(seed in 0u64..10_000, nelx in 2usize..=8, nely in 2usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = MeshSpec::new(nelx, nely).unwrap();
        let bc = BoundaryConditions::cantilever(&mesh);
        let n = mesh.n_elements();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        let d = DensityField::from_values(&mesh, x.clone()).unwrap();
        let u = assemble_and_solve(&d, 3.0, &mesh, &bc).unwrap();
        let dc = sensitivities(&d, &u, 3.0, &mesh).unwrap();
        let e = rng.random_range(0..n);
        let h = 1e-6;
        let c_at = |delta: f64| {
            let mut v = x.clone();
            v[e] += delta;
            let d = DensityField::from_values(&mesh, v).unwrap();
            let u = assemble_and_solve(&d, 3.0, &mesh, &bc).unwrap();
            compliance(&d, &u, 3.0, &mesh).unwrap()
        };
        let fd = (c_at(h) - c_at(-h)) / (2.0 * h);
        prop_assert!(rel(dc[e], fd) < 1e-4, "{} vs {}", dc[e], fd);
    }
}
