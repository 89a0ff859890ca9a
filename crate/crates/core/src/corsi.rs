//! Expected-matrix approximation: the top eigenvalue of `E[Φ]`.
//!
//! First-order moment estimates give
//! `E[W_ij²] ≈ √(M/N)·b/(qN)` and `E[W_ik·W_jk] ≈ q/(N(√(MN)·b + q(N−1)))`,
//! so `E[Φ] = g·(d − d_o)·I + g·d_o·𝟙𝟙ᵀ` with `g = (η−1)/γ`,
//! `d = b/(qα)` and `d_o = q/(√(MN)·b + q(N−1))`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::ModelParams;

/// `E[Φ]`, a diagonal-plus-rank-one `N × N` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedPhi {
    /// `g = (η−1)/γ`.
    pub g: f64,
    /// Diagonal coefficient; the diagonal entry is `g·d`.
    pub d: f64,
    /// Off-diagonal coefficient; every off-diagonal entry is `g·d_o`.
    pub d_o: f64,
    pub n: usize,
}

impl ExpectedPhi {
    pub fn diagonal_entry(&self) -> f64 {
        self.g * self.d
    }

    pub fn off_diagonal_entry(&self) -> f64 {
        self.g * self.d_o
    }

    /// The non-degenerate eigenvalue `g(d + (N−1)d_o)`.
    pub fn top_eigenvalue(&self) -> f64 {
        self.g * (self.d + (self.n as f64 - 1.0) * self.d_o)
    }

    /// The eigenvalue `g(d − d_o)`, with multiplicity `N − 1`.
    pub fn bulk_eigenvalue(&self) -> f64 {
        self.g * (self.d - self.d_o)
    }

    /// Dense row-major matrix.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| if i == j { self.diagonal_entry() } else { self.off_diagonal_entry() })
                    .collect()
            })
            .collect()
    }
}

/// Approximate second moments of the portfolio weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightMoments {
    /// `E[W_ij²] ≈ √(M/N)·b/(qN)`.
    pub self_moment: f64,
    /// `E[W_ik·W_jk] ≈ q/(N(√(MN)·b + q(N−1)))` for `i ≠ j`.
    pub cross_moment: f64,
}

pub fn weight_moments(p: &ModelParams, b: f64) -> WeightMoments {
    let n = p.n_assets as f64;
    let m = p.n_institutions as f64;
    WeightMoments {
        self_moment: (m / n).sqrt() * b / (p.q * n),
        cross_moment: p.q / (n * ((m * n).sqrt() * b + p.q * (n - 1.0))),
    }
}

/// Builds `E[Φ]` from `E[Φ_ii] = g·(N/M)·M·E[W_ij²]` and
/// `E[Φ_ij] = g·(N/M)·M·E[W_ik·W_jk]`.
pub fn expected_phi(p: &ModelParams, b: f64) -> Result<ExpectedPhi> {
    let g = p.impact_gain()?;
    let n = p.n_assets as f64;
    let mom = weight_moments(p, b);
    Ok(ExpectedPhi {
        g,
        d: n * mom.self_moment,
        d_o: n * mom.cross_moment,
        n: p.n_assets,
    })
}

/// Large-`N, M` closed form `((η−1)/γ)·(b/(qα) + q/(b/α + q))`.
pub fn corsi_lambda_max(p: &ModelParams, b: f64) -> Result<f64> {
    let g = p.impact_gain()?;
    let a = p.alpha();
    Ok(g * (b / (p.q * a) + p.q / (b / a + p.q)))
}

/// Finite-`N` top eigenvalue `g(d + (N−1)d_o)` of [`expected_phi`].
pub fn corsi_lambda_max_finite(p: &ModelParams, b: f64) -> Result<f64> {
    Ok(expected_phi(p, b)?.top_eigenvalue())
}

/// `∂λ̃/∂b = g·(1/(qα) − qα/(b + qα)²)`.
pub fn corsi_db(p: &ModelParams, b: f64) -> Result<f64> {
    let g = p.impact_gain()?;
    let aq = p.alpha() * p.q;
    Ok(g * (1.0 / aq - aq / ((b + aq) * (b + aq))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::target_leverage;
    use approx::assert_relative_eq;

    #[test]
    fn homogeneous_reference_value() {
        let p = ModelParams::default();
        // Two-step evaluation: η first, then the closed form.
        let eta = target_leverage(&p).unwrap();
        let a = (2.0f64 / 3.0).sqrt();
        let expect = (eta - 1.0) / 50.0 * (1.0 / (8.0 * a) + 8.0 / (1.0 / a + 8.0));
        let got = corsi_lambda_max(&p, 1.0).unwrap();
        assert_relative_eq!(got, expect, epsilon = 1e-15);
        assert!((got - 0.0742).abs() < 5e-5, "λ̃ = {got}");
    }

    #[test]
    fn finite_form_converges_to_closed_form() {
        let base = ModelParams::default();
        let mut prev_gap = f64::INFINITY;
        for d in [1usize, 4, 16, 64] {
            let p = base.with_dims(200 * d, 300 * d);
            let gap = (corsi_lambda_max_finite(&p, 2.4).unwrap() - corsi_lambda_max(&p, 2.4).unwrap()).abs();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-4);
    }

    #[test]
    fn grows_linearly_in_b() {
        let p = ModelParams::default();
        let l1 = corsi_lambda_max(&p, 1e6).unwrap();
        let l2 = corsi_lambda_max(&p, 2e6).unwrap();
        assert_relative_eq!(l2 / l1, 2.0, epsilon = 1e-5);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let p = ModelParams::default();
        for b in [1.0, 2.4, 10.0, 50.0] {
            let h = 1e-6;
            let fd = (corsi_lambda_max(&p, b + h).unwrap() - corsi_lambda_max(&p, b - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(corsi_db(&p, b).unwrap(), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn off_diagonal_denominator_forms_agree() {
        // √(MN)·b − q(1 − N) and √(MN)·b + q(N − 1) are the same quantity.
        for (n, m, q, b) in [(200.0f64, 300.0f64, 8.0f64, 2.4f64), (400.0, 300.0, 3.0, 1.0), (17.0, 5.0, 0.7, 33.0)] {
            let f1: f64 = (m * n).sqrt() * b - q * (1.0 - n);
            let f2: f64 = (m * n).sqrt() * b + q * (n - 1.0);
            assert_relative_eq!(f1, f2, max_relative = 1e-15);
        }
    }

    #[test]
    fn matrix_structure() {
        let e = expected_phi(&ModelParams::default(), 2.4).unwrap();
        let a = ModelParams::default().alpha();
        assert_relative_eq!(e.d, 2.4 / (8.0 * a), max_relative = 1e-14);
        assert!(e.d > e.d_o && e.d_o > 0.0);
        let dense = e.to_dense();
        let row_sum: f64 = dense[3].iter().sum();
        assert_relative_eq!(row_sum, e.top_eigenvalue(), max_relative = 1e-13);
    }
}
