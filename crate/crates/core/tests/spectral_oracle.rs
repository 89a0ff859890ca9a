//! Matrix-free λmax against dense symmetric eigendecomposition.

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

use instab_core::corsi::{corsi_lambda_max, expected_phi};
use instab_core::network::{sample_holdings, to_weights};
use instab_core::params::{solve_heterogeneity, ModelParams};
use instab_core::spectral::{lambda_max, PhiOperator, Solver, SolverOptions};

fn dense_top(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    SymmetricEigen::new(m).eigenvalues.max()
}

/// Forms `κ₀·W·Wᵀ` entry by entry from the weight triplets.
fn dense_phi(p: &ModelParams, phi: f64, p_big: f64, seed: u64) -> (PhiOperator, Vec<Vec<f64>>) {
    let h = solve_heterogeneity(phi, p_big).unwrap();
    let x = sample_holdings(p, &h, seed).unwrap();
    let w = to_weights(&x);
    let mut wd = vec![vec![0.0; p.n_institutions]; p.n_assets];
    for (i, j, v) in w.matrix.triplets() {
        wd[i][j] = v;
    }
    let k = p.phi_prefactor().unwrap();
    let dense = (0..p.n_assets)
        .map(|i| {
            (0..p.n_assets)
                .map(|l| k * (0..p.n_institutions).map(|j| wd[i][j] * wd[l][j]).sum::<f64>())
                .collect()
        })
        .collect();
    (PhiOperator::from_weights(w, k), dense)
}

#[test]
fn lanczos_and_power_match_dense() {
    let base = ModelParams::default();
    for (k, &(n, m, q)) in [(30usize, 45usize, 4.0), (50, 20, 2.0), (12, 50, 8.0), (50, 50, 30.0)]
        .iter()
        .enumerate()
    {
        let p = base.with_dims(n, m).with_q(q);
        let (op, dense) = dense_phi(&p, 0.7, 0.4, k as u64);
        let truth = dense_top(&dense);
        let lz = lambda_max(&op, &SolverOptions::default());
        assert!(lz.converged);
        assert!((lz.value - truth).abs() <= 1e-8 * truth, "lanczos {} vs {truth}", lz.value);
        let pw = lambda_max(
            &op,
            &SolverOptions {
                solver: Solver::Power,
                tol: 1e-13,
                max_iter: Some(200_000),
                ..SolverOptions::default()
            },
        );
        assert!((pw.value - truth).abs() <= 1e-6 * truth, "power {} vs {truth}", pw.value);
    }
}

#[test]
fn operator_matches_dense_product() {
    let p = ModelParams::default().with_dims(20, 35).with_q(5.0);
    let (op, dense) = dense_phi(&p, 0.5, 0.5, 3);
    let v: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
    let got = op.apply(&v);
    for i in 0..20 {
        let want: f64 = (0..20).map(|j| dense[i][j] * v[j]).sum();
        assert!((got[i] - want).abs() < 1e-14, "{i}: {} vs {want}", got[i]);
    }
}

#[test]
fn expected_matrix_eigenstructure() {
    let p = ModelParams::default();
    for b in [1.0, solve_heterogeneity(0.9, 7.0 / 27.0).unwrap().second_moment()] {
        let e = expected_phi(&p, b).unwrap();
        let dense = e.to_dense();
        let n = dense.len();
        let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| dense[i][j]));
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let top = e.top_eigenvalue();
        let bulk = e.bulk_eigenvalue();
        assert!((vals[0] - top).abs() <= 1e-12 * top);
        for v in &vals[1..] {
            assert!((v - bulk).abs() <= 1e-12 * bulk, "{v} vs {bulk}");
        }
        // The finite-N top eigenvalue sits near the large-N closed form.
        let closed = corsi_lambda_max(&p, b).unwrap();
        assert!((top - closed).abs() / closed < 0.02);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matrix_free_equals_dense(n in 2usize..=50, m in 2usize..=50, q in 1.0f64..12.0,
                                phi in 0.0f64..0.95, p_big in 0.05f64..0.95, seed in any::<u64>()) {
        let p = ModelParams::default().with_dims(n, m).with_q(q);
        prop_assume!(p.validate().is_ok());
        let (op, dense) = dense_phi(&p, phi, p_big, seed);
        let truth = dense_top(&dense);
        let got = lambda_max(&op, &SolverOptions::default()).value;
        prop_assert!((got - truth).abs() <= 1e-8 * truth.max(1e-300), "{} vs {}", got, truth);
    }

    #[test]
    fn phi_is_positive_semidefinite(seed in any::<u64>(), phi in 0.0f64..0.95) {
        let p = ModelParams::default().with_dims(15, 25).with_q(3.0);
        let (_, dense) = dense_phi(&p, phi, 0.3, seed);
        let n = dense.len();
        let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| dense[i][j]));
        prop_assert!(eig.eigenvalues.min() > -1e-14);
        for (i, row) in dense.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                prop_assert!((v - dense[j][i]).abs() < 1e-15);
            }
        }
    }
}
