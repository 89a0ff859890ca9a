//! Matrix-free largest eigenvalue of `Φ = κ₀·W·Wᵀ` and its Monte Carlo
//! average over the holdings ensemble.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::{sample_holdings, to_weights, HoldingsMatrix, PortfolioWeights};
use crate::params::{HeterogeneityParams, ModelParams};
use crate::pool::map_indexed;
use crate::rng::derive_seed;
use crate::sparse::CscMatrix;
use crate::stats::Welford;

/// Estimator that produced an [`EigEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Sampling and diagonalizing `Φ`.
    Diagonalization,
    /// Top eigenvalue of the expected matrix `E[Φ]`.
    Corsi,
    /// Population dynamics for `κ·X·Xᵀ`.
    Replica,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Diagonalization, Method::Corsi, Method::Replica];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Diagonalization => "diagonalization",
            Method::Corsi => "corsi",
            Method::Replica => "replica",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diagonalization" | "diag" | "mc" => Some(Method::Diagonalization),
            "corsi" => Some(Method::Corsi),
            "replica" => Some(Method::Replica),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An estimate of the (average) largest eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigEstimate {
    pub value: f64,
    /// Monte Carlo standard error; zero for closed forms and single instances.
    pub stderr: f64,
    pub samples: usize,
    pub method: Method,
    /// Total solver iterations (matrix-vector products, or population sweeps).
    pub iterations: usize,
    /// Samples whose solver hit its iteration cap.
    pub non_converged: usize,
}

impl EigEstimate {
    pub fn exact(value: f64, method: Method) -> Self {
        Self {
            value,
            stderr: 0.0,
            samples: 1,
            method,
            iterations: 0,
            non_converged: 0,
        }
    }
}

/// Linear operator `v ↦ prefactor·A·(Aᵀ·v)` for a sparse `N × M` matrix `A`.
///
/// With `A = W` and `prefactor = κ₀` this is `Φ`; with `A = X` and the replica
/// prefactor `κ` it is the surrogate `κ·X·Xᵀ`. The `N × N` product is never
/// formed.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiOperator {
    factor: CscMatrix,
    prefactor: f64,
}

impl PhiOperator {
    pub fn new(factor: CscMatrix, prefactor: f64) -> Self {
        Self { factor, prefactor }
    }

    /// `Φ = κ₀·W·Wᵀ`.
    pub fn from_weights(w: PortfolioWeights, kappa0: f64) -> Self {
        Self::new(w.matrix, kappa0)
    }

    /// `κ·X·Xᵀ`.
    pub fn from_holdings(x: HoldingsMatrix, kappa: f64) -> Self {
        Self::new(x.matrix, kappa)
    }

    /// Builds `Φ` for given parameters and an already sampled `X`.
    pub fn phi(p: &ModelParams, x: &HoldingsMatrix) -> Result<Self> {
        Ok(Self::from_weights(to_weights(x), p.phi_prefactor()?))
    }

    pub fn dim(&self) -> usize {
        self.factor.n_rows()
    }

    pub fn prefactor(&self) -> f64 {
        self.prefactor
    }

    pub fn factor(&self) -> &CscMatrix {
        &self.factor
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            factor: self.factor.clone(),
            prefactor: self.prefactor * c,
        }
    }

    /// `out = Φ·v`. `scratch` must have length `M`.
    pub fn apply_with(&self, v: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        self.factor.gram_apply(v, out, scratch);
        out.iter_mut().for_each(|o| *o *= self.prefactor);
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let mut scratch = vec![0.0; self.factor.n_cols()];
        self.apply_with(v, &mut out, &mut scratch);
        out
    }

    /// Dense `N × N` copy, row-major. Only for small test instances.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut d = vec![vec![0.0; n]; n];
        for j in 0..self.factor.n_cols() {
            let (rows, vals) = self.factor.column(j);
            for (&a, &wa) in rows.iter().zip(vals) {
                for (&b, &wb) in rows.iter().zip(vals) {
                    d[a as usize][b as usize] += self.prefactor * wa * wb;
                }
            }
        }
        d
    }
}

/// Eigensolver used by [`lambda_max`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    /// Lanczos with full reorthogonalization.
    Lanczos,
    /// Power iteration with Rayleigh-quotient checks.
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub solver: Solver,
    /// Relative accuracy on the eigenvalue.
    pub tol: f64,
    /// Iteration cap; `None` means `10·N`.
    pub max_iter: Option<usize>,
    /// Also require the residual `‖Φv − θv‖` to be below `tol·θ`, so that the
    /// eigenvector and not only the eigenvalue is accurate (Lanczos only).
    pub accurate_vector: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            solver: Solver::Lanczos,
            tol: 1e-10,
            max_iter: None,
            accurate_vector: false,
        }
    }
}

/// Result of a single largest-eigenvalue computation.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaMax {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Unit-norm eigenvector estimate.
    pub vector: Vec<f64>,
}

/// Largest eigenvalue of a PSD [`PhiOperator`].
///
/// On hitting `max_iter` the best iterate is returned with `converged = false`.
pub fn lambda_max(op: &PhiOperator, opts: &SolverOptions) -> LambdaMax {
    let n = op.dim();
    let max_iter = opts.max_iter.unwrap_or(10 * n).max(1);
    if n == 0 {
        return LambdaMax {
            value: 0.0,
            iterations: 0,
            converged: true,
            vector: Vec::new(),
        };
    }
    match opts.solver {
        Solver::Lanczos => lanczos(op, opts.tol, max_iter, opts.accurate_vector),
        Solver::Power => power_iteration(op, opts.tol, max_iter),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn start_vector(n: usize) -> Vec<f64> {
    // Positive, so it overlaps the Perron vector of any non-negative matrix.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.25 * ((i as f64) * 0.618_033_988_75).fract()).collect();
    let s = norm(&v);
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn power_iteration(op: &PhiOperator, tol: f64, max_iter: usize) -> LambdaMax {
    let n = op.dim();
    let mut scratch = vec![0.0; op.factor.n_cols()];
    let mut v = start_vector(n);
    let mut av = vec![0.0; n];
    let mut theta = 0.0;
    let mut stable = 0;
    for it in 1..=max_iter {
        op.apply_with(&v, &mut av, &mut scratch);
        let next = dot(&v, &av);
        let nrm = norm(&av);
        if nrm == 0.0 {
            return LambdaMax {
                value: 0.0,
                iterations: it,
                converged: true,
                vector: v,
            };
        }
        let change = (next - theta).abs();
        theta = next;
        v.iter_mut().zip(&av).for_each(|(x, y)| *x = y / nrm);
        if change <= tol * theta.abs() {
            stable += 1;
            if stable >= 3 {
                return LambdaMax {
                    value: theta,
                    iterations: it,
                    converged: true,
                    vector: v,
                };
            }
        } else {
            stable = 0;
        }
    }
    LambdaMax {
        value: theta,
        iterations: max_iter,
        converged: false,
        vector: v,
    }
}

/// Number of eigenvalues of the symmetric tridiagonal `(diag, off)` below `x`.
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..diag.len() {
        let b2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        d = diag[i] - x - if i == 0 { 0.0 } else { b2 / d };
        if d == 0.0 {
            d = f64::EPSILON * (diag[i].abs() + x.abs() + 1e-300);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// `k`-th largest (0-based) eigenvalue of a symmetric tridiagonal matrix by
/// Sturm bisection.
fn tridiag_kth_largest(diag: &[f64], off: &[f64], k: usize) -> f64 {
    let n = diag.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    // Want the point where count(x) crosses n - k.
    let target = n - k;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 2.0 * f64::EPSILON * scale || mid == lo || mid == hi {
            break;
        }
        if sturm_count(diag, off, mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Eigenvector of the tridiagonal matrix for eigenvalue `theta` by inverse
/// iteration with a partially pivoted tridiagonal solve.
fn tridiag_eigenvector(diag: &[f64], off: &[f64], theta: f64) -> Vec<f64> {
    let n = diag.len();
    if n == 1 {
        return vec![1.0];
    }
    let scale = diag.iter().chain(off).fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let shift = theta + 4.0 * f64::EPSILON * scale;
    let mut y = vec![1.0; n];
    for _ in 0..3 {
        y = solve_shifted_tridiag(diag, off, shift, &y, scale);
        let s = norm(&y);
        if !(s > 0.0) || !s.is_finite() {
            y = vec![1.0; n];
            continue;
        }
        y.iter_mut().for_each(|v| *v /= s);
    }
    y
}

/// Solves `(T − σI)·x = rhs` with Gaussian elimination and partial pivoting.
fn solve_shifted_tridiag(diag: &[f64], off: &[f64], sigma: f64, rhs: &[f64], scale: f64) -> Vec<f64> {
    let n = diag.len();
    // Row i of the eliminated system holds u[i][0..3] on columns i, i+1, i+2.
    let mut u = vec![[0.0f64; 3]; n];
    let mut b = rhs.to_vec();
    // Current working row (columns i, i+1).
    let mut cur = [diag[0] - sigma, if n > 1 { off[0] } else { 0.0 }, 0.0];
    for i in 0..n {
        if i + 1 < n {
            let next = [
                off[i],
                diag[i + 1] - sigma,
                if i + 2 < n { off[i + 1] } else { 0.0 },
            ];
            let (pivot_row, other, swapped) = if next[0].abs() > cur[0].abs() {
                (next, cur, true)
            } else {
                (cur, next, false)
            };
            if swapped {
                b.swap(i, i + 1);
            }
            let mut p = pivot_row;
            if p[0] == 0.0 {
                p[0] = f64::EPSILON * scale;
            }
            let m = other[0] / p[0];
            u[i] = p;
            b[i + 1] -= m * b[i];
            cur = [other[1] - m * p[1], other[2] - m * p[2], 0.0];
        } else {
            if cur[0] == 0.0 {
                cur[0] = f64::EPSILON * scale;
            }
            u[i] = cur;
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        if i + 1 < n {
            s -= u[i][1] * x[i + 1];
        }
        if i + 2 < n {
            s -= u[i][2] * x[i + 2];
        }
        x[i] = s / u[i][0];
    }
    x
}

fn lanczos(op: &PhiOperator, tol: f64, max_iter: usize, accurate_vector: bool) -> LambdaMax {
    let n = op.dim();
    let max_dim = max_iter.min(n);
    let mut scratch = vec![0.0; op.factor.n_cols()];
    let mut basis: Vec<Vec<f64>> = vec![start_vector(n)];
    let mut diag: Vec<f64> = Vec::new();
    let mut off: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut theta = 0.0;
    let mut y = vec![1.0];
    let mut converged = false;
    let mut steps = 0;
    while steps < max_dim {
        let k = basis.len() - 1;
        op.apply_with(&basis[k], &mut w, &mut scratch);
        steps += 1;
        let a = dot(&basis[k], &w);
        diag.push(a);
        // Full reorthogonalization, two passes.
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                w.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
            }
        }
        let beta = norm(&w);
        theta = tridiag_kth_largest(&diag, &off, 0);
        y = tridiag_eigenvector(&diag, &off, theta);
        let scale = theta.abs().max(diag.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        let residual = beta * y[k].abs();
        let err = if accurate_vector {
            residual
        } else if diag.len() > 1 {
            let gap = theta - tridiag_kth_largest(&diag, &off, 1);
            if gap > 0.0 {
                residual.min(residual * residual / gap)
            } else {
                residual
            }
        } else {
            residual
        };
        if err <= tol * theta.abs() || beta <= 1e-14 * scale.max(f64::MIN_POSITIVE) || scale == 0.0 {
            converged = true;
            break;
        }
        if basis.len() == n {
            // Krylov space is the whole space: T is similar to the operator.
            converged = true;
            break;
        }
        off.push(beta);
        basis.push(w.iter().map(|x| x / beta).collect());
    }
    let mut vector = vec![0.0; n];
    for (q, &c) in basis.iter().zip(&y) {
        vector.iter_mut().zip(q).for_each(|(v, qi)| *v += c * qi);
    }
    let s = norm(&vector);
    if s > 0.0 {
        vector.iter_mut().for_each(|v| *v /= s);
    }
    // The last Perron-like vector is sign-ambiguous; prefer a positive sum.
    if vector.iter().sum::<f64>() < 0.0 {
        vector.iter_mut().for_each(|v| *v = -*v);
    }
    LambdaMax {
        value: theta,
        iterations: steps,
        converged,
        vector,
    }
}

/// Options for Monte Carlo averages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub solver: SolverOptions,
    /// Worker threads; `0` uses every core.
    pub workers: usize,
}

/// Averages `instance(sample_seed)` over `n_samples` independent samples.
/// Sample `k` always uses `derive_seed(seed, k)`, and the reduction runs in
/// sample order, so the result does not depend on `workers`.
pub fn mc_average<F>(n_samples: usize, seed: u64, opts: &McOptions, method: Method, instance: F) -> Result<EigEstimate>
where
    F: Fn(u64) -> Result<LambdaMax> + Sync + Send,
{
    if n_samples == 0 {
        return Err(crate::Error::param("n_samples", "must be at least 1"));
    }
    let results = map_indexed(n_samples, opts.workers, |k| instance(derive_seed(seed, k as u64)));
    let mut acc = Welford::default();
    let mut iterations = 0;
    let mut non_converged = 0;
    for r in results {
        let r = r?;
        acc.push(r.value);
        iterations += r.iterations;
        if !r.converged {
            non_converged += 1;
        }
    }
    if non_converged > 0 {
        log::warn!("{non_converged} of {n_samples} eigenvalue solves hit the iteration cap");
    }
    let e = acc.estimate();
    Ok(EigEstimate {
        value: e.mean,
        stderr: e.stderr,
        samples: e.samples,
        method,
        iterations,
        non_converged,
    })
}

/// Monte Carlo estimate of `E[λmax(Φ)]`.
pub fn mc_lambda_max(
    p: &ModelParams,
    h: &HeterogeneityParams,
    n_samples: usize,
    seed: u64,
    opts: &McOptions,
) -> Result<EigEstimate> {
    p.validate()?;
    h.validate()?;
    let kappa0 = p.phi_prefactor()?;
    mc_average(n_samples, seed, opts, Method::Diagonalization, |s| {
        let x = sample_holdings(p, h, s)?;
        let op = PhiOperator::from_weights(to_weights(&x), kappa0);
        Ok(lambda_max(&op, &opts.solver))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(n: usize, m: usize, t: &[(usize, usize, f64)], k: f64) -> PhiOperator {
        PhiOperator::new(CscMatrix::from_triplets(n, m, t), k)
    }

    #[test]
    fn rank_one_projector() {
        let o = op(4, 3, &[(2, 1, 1.0)], 0.37);
        for solver in [Solver::Lanczos, Solver::Power] {
            let r = lambda_max(&o, &SolverOptions { solver, ..Default::default() });
            assert!((r.value - 0.37).abs() < 1e-14, "{solver:?}: {}", r.value);
            assert!(r.converged);
        }
    }

    #[test]
    fn two_institutions_same_asset() {
        let o = op(3, 2, &[(0, 0, 1.0), (0, 1, 1.0)], 0.5);
        let r = lambda_max(&o, &SolverOptions::default());
        assert!((r.value - 1.0).abs() < 1e-14);
        assert!((r.vector[0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_operator() {
        let o = op(5, 5, &[], 1.0);
        let r = lambda_max(&o, &SolverOptions::default());
        assert_eq!(r.value, 0.0);
        assert!(r.converged);
    }

    #[test]
    fn tridiagonal_helpers() {
        // T = [[2,1,0],[1,2,1],[0,1,2]] has eigenvalues 2-√2, 2, 2+√2.
        let d = [2.0, 2.0, 2.0];
        let e = [1.0, 1.0];
        let top = tridiag_kth_largest(&d, &e, 0);
        assert!((top - (2.0 + 2f64.sqrt())).abs() < 1e-14);
        assert!((tridiag_kth_largest(&d, &e, 1) - 2.0).abs() < 1e-14);
        assert!((tridiag_kth_largest(&d, &e, 2) - (2.0 - 2f64.sqrt())).abs() < 1e-14);
        let y = tridiag_eigenvector(&d, &e, top);
        let expect = [0.5, std::f64::consts::FRAC_1_SQRT_2, 0.5];
        let sign = y[0].signum();
        for (a, b) in y.iter().zip(expect) {
            assert!((a * sign - b).abs() < 1e-12);
        }
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let t: Vec<_> = (0..40).flat_map(|j| [(j % 30, j, 1.0), ((j * 7 + 3) % 30, j, 0.5)]).collect();
        let o = op(30, 40, &t, 1.0);
        let r = lambda_max(
            &o,
            &SolverOptions {
                solver: Solver::Power,
                tol: 1e-15,
                max_iter: Some(2),
                accurate_vector: false,
            },
        );
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
    }
}
