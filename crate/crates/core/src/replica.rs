//! Surrogate `Φ ≈ κ·X·Xᵀ` and a population-dynamics estimate of its average
//! largest eigenvalue in the sparse large-`N` limit.
//!
//! Replacing `W` by `c·X`, with `c = E[W_ij]/E[X_ij] = (1−e^{−αq})/(αq)`,
//! yields `κ = ((η−1)/γ)·(1−e^{−αq})²/q²`. The eigenvalues of `X·Xᵀ` are the
//! squared singular values of `X`, i.e. the squares of the eigenvalues of the
//! bipartite adjacency matrix `[[0, X], [Xᵀ, 0]]`. On the locally tree-like
//! bipartite graph (asset degree ~ Poisson(q/α), institution degree ~
//! Poisson(qα), i.i.d. edge weights) the top eigenpair at eigenvalue `μ`
//! satisfies the cavity recursions
//!
//! ```text
//! ω_{i→p} = μ − Σ_{c ∈ ∂i∖p} K_ic² / ω_{c→i}
//! h_{i→p} =     Σ_{c ∈ ∂i∖p} K_ic · h_{c→i} / ω_{c→i}
//! ```
//!
//! The `ω` are inverse cavity variances of the resolvent and must stay
//! positive above the spectrum; the `h` recursion is linear and its growth
//! rate per asset–institution double layer decreases with `μ`. The top
//! eigenvalue is the `μ` at which the `h` populations are stationary (growth
//! rate one); it is located by bisection.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{sample_holdings, sample_holdings_with, WeightDistribution};
use crate::params::{HeterogeneityParams, ModelParams};
use crate::rng::{derive_seed, stream_rng};
use crate::spectral::{lambda_max, EigEstimate, Method, PhiOperator, SolverOptions};
use crate::stats::Welford;

/// `c = (1 − e^{−αq})/(αq)`, continuous at `αq → 0` where it tends to one.
pub fn scaling_constant(alpha: f64, q: f64) -> f64 {
    let x = alpha * q;
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// Everything the population dynamics needs about the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxPhiSpec {
    pub c: f64,
    /// `κ = ((η−1)/γ)·(1−e^{−αq})²/q²`.
    pub kappa: f64,
    pub q: f64,
    pub alpha: f64,
    /// Investment sizes as `(value, probability)` atoms.
    pub weights: Vec<(f64, f64)>,
    /// Mean number of investors per asset, `q/α`.
    pub mean_degree_asset: f64,
    /// Mean number of assets per institution, `qα`.
    pub mean_degree_institution: f64,
}

impl ApproxPhiSpec {
    pub fn new(p: &ModelParams, h: &HeterogeneityParams) -> Result<Self> {
        p.validate()?;
        h.validate()?;
        let alpha = p.alpha();
        let q = p.q;
        let g = p.impact_gain()?;
        let x = alpha * q;
        let one_minus = -(-x).exp_m1();
        Ok(Self {
            c: scaling_constant(alpha, q),
            kappa: g * one_minus * one_minus / (q * q),
            q,
            alpha,
            weights: vec![(h.big, h.p_big), (h.small, h.p_small)],
            mean_degree_asset: q / alpha,
            mean_degree_institution: q * alpha,
        })
    }

    fn distribution(&self) -> Result<WeightDistribution> {
        WeightDistribution::discrete(&self.weights)
    }
}

/// Samples `X` and returns the operator `κ·X·Xᵀ`.
pub fn approx_phi_sample(p: &ModelParams, h: &HeterogeneityParams, seed: u64) -> Result<PhiOperator> {
    let spec = ApproxPhiSpec::new(p, h)?;
    let x = sample_holdings(p, h, seed)?;
    Ok(PhiOperator::from_holdings(x, spec.kappa))
}

/// Tuning of the population-dynamics estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    /// Members per population (one population per side of the graph).
    pub pop_size: usize,
    /// Sweeps discarded before measuring.
    pub equilibration_sweeps: usize,
    /// Maximum measured sweeps per probe.
    pub measurement_sweeps: usize,
    /// Relative width of the final bisection bracket on `λ`.
    pub bisection_tol: f64,
    /// Independent estimates averaged for the reported standard error.
    pub replicas: usize,
    /// Stop a probe early once its mean log-growth is this many standard
    /// errors away from zero (`0` disables early stopping).
    pub early_stop_sigmas: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            pop_size: 100_000,
            equilibration_sweeps: 1_000,
            measurement_sweeps: 1_000,
            bisection_tol: 1e-3,
            replicas: 1,
            early_stop_sigmas: 5.0,
        }
    }
}

impl PopulationConfig {
    /// Smaller populations and fewer sweeps, for grid sweeps and tests.
    pub fn fast() -> Self {
        Self {
            pop_size: 4_000,
            equilibration_sweeps: 60,
            measurement_sweeps: 200,
            bisection_tol: 2e-3,
            replicas: 1,
            early_stop_sigmas: 5.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.pop_size < 1_000 {
            return Err(Error::param("pop_size", "population must hold at least 1000 members"));
        }
        if self.measurement_sweeps < 2 {
            return Err(Error::param("measurement_sweeps", "need at least 2 measured sweeps"));
        }
        if !(self.bisection_tol > 0.0) {
            return Err(Error::param("bisection_tol", "must be > 0"));
        }
        if self.replicas == 0 {
            return Err(Error::param("replicas", "must be at least 1"));
        }
        Ok(())
    }
}

/// Cavity messages of one side of the bipartite graph, stored as
/// `(1/ω, h/ω)` pairs because that is what the parents consume.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub messages: Vec<(f64, f64)>,
}

impl Population {
    fn uniform(size: usize, omega: f64) -> Self {
        Self {
            messages: vec![(1.0 / omega, 1.0 / omega); size],
        }
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Mean cavity precision `E[ω]`.
    pub fn mean_omega(&self) -> f64 {
        self.messages.iter().map(|m| 1.0 / m.0).sum::<f64>() / self.len() as f64
    }
}

/// State of a single probe.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    /// Messages sent by assets towards institutions.
    pub asset: Population,
    /// Messages sent by institutions towards assets.
    pub institution: Population,
    pub sweep_count: usize,
    pub seed: u64,
    /// Running mean of the log-growth per sweep and its standard error.
    pub log_growth: f64,
    pub log_growth_stderr: f64,
}

/// What a probe at trial eigenvalue `λ` found.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ProbeOutcome {
    /// Fields stayed well defined; `log_growth > 0` means `λ` is below the top
    /// eigenvalue.
    Growth { log_growth: f64, stderr: f64, sweeps: usize },
    /// A cavity precision became non-positive: `λ` lies inside the spectrum.
    BelowEdge { sweep: usize },
}

impl ProbeOutcome {
    pub fn is_below_edge(&self) -> bool {
        match *self {
            ProbeOutcome::Growth { log_growth, .. } => log_growth > 0.0,
            ProbeOutcome::BelowEdge { .. } => true,
        }
    }
}

/// Poisson sampler by table inversion; the means involved are small.
struct DegreeTable {
    cdf: Vec<f64>,
    tail: Poisson<f64>,
}

impl DegreeTable {
    fn new(mean: f64) -> Result<Self> {
        let tail = Poisson::new(mean).map_err(|e| Error::param("q", e.to_string()))?;
        let mut cdf = Vec::new();
        let mut pk = (-mean).exp();
        let mut acc = 0.0;
        let mut k = 0.0;
        while acc < 1.0 - 1e-15 && cdf.len() < 4096 && (pk > 0.0 || k < mean) {
            acc += pk;
            cdf.push(acc);
            k += 1.0;
            pk *= mean / k;
        }
        Ok(Self { cdf, tail })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        match self.cdf.iter().position(|&c| u < c) {
            Some(k) => k,
            None => self.tail.sample(rng) as usize,
        }
    }
}

/// Two-atom edge weights as `(K, K²)`, drawn with one uniform.
struct EdgeWeights {
    atoms: Vec<(f64, f64, f64)>,
}

impl EdgeWeights {
    fn new(spec: &ApproxPhiSpec) -> Result<Self> {
        spec.distribution()?;
        let total: f64 = spec.weights.iter().map(|w| w.1).sum();
        let mut acc = 0.0;
        let mut atoms: Vec<(f64, f64, f64)> = spec
            .weights
            .iter()
            .filter(|w| w.1 > 0.0)
            .map(|&(v, p)| {
                acc += p / total;
                (acc, v, v * v)
            })
            .collect();
        if let Some(last) = atoms.last_mut() {
            last.0 = f64::INFINITY;
        }
        Ok(Self { atoms })
    }

    #[inline]
    fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        if self.atoms.len() == 1 {
            return (self.atoms[0].1, self.atoms[0].2);
        }
        let u: f64 = rng.random();
        let a = self.atoms.iter().find(|a| u < a.0).unwrap_or(&self.atoms[0]);
        (a.1, a.2)
    }
}

/// Regenerates every member of `out` from `src`: draws an excess degree, that
/// many parents from `src` and fresh edge weights. Returns `None` if some
/// precision is non-positive, otherwise the normalization applied to `h`.
fn regenerate(
    out: &mut Population,
    src: &Population,
    mu: f64,
    degree: &DegreeTable,
    weights: &EdgeWeights,
    rng: &mut ChaCha8Rng,
) -> Option<f64> {
    let n = src.messages.len();
    let mut total = 0.0;
    for m in out.messages.iter_mut() {
        let k = degree.sample(rng);
        let mut shift = 0.0;
        let mut field = 0.0;
        for _ in 0..k {
            let (inv, hw) = src.messages[rng.random_range(0..n)];
            let (w, w2) = weights.sample(rng);
            shift += w2 * inv;
            field += w * hw;
        }
        let o = mu - shift;
        if !(o > 0.0) {
            return None;
        }
        *m = (1.0 / o, field / o);
        total += field;
    }
    let mean = total / out.messages.len() as f64;
    if !(mean > 0.0) || !mean.is_finite() {
        return None;
    }
    let inv = 1.0 / mean;
    out.messages.iter_mut().for_each(|m| m.1 *= inv);
    Some(mean)
}

/// Runs the population dynamics at trial eigenvalue `lambda` of `X·Xᵀ`.
pub fn probe(spec: &ApproxPhiSpec, lambda: f64, cfg: &PopulationConfig, seed: u64) -> Result<(ProbeOutcome, PopulationState)> {
    cfg.validate()?;
    let mu = lambda.max(f64::MIN_POSITIVE).sqrt();
    let weights = EdgeWeights::new(spec)?;
    let deg_inst = DegreeTable::new(spec.mean_degree_institution)?;
    let deg_asset = DegreeTable::new(spec.mean_degree_asset)?;
    let mut rng = stream_rng(seed, 0);
    let mut state = PopulationState {
        asset: Population::uniform(cfg.pop_size, mu),
        institution: Population::uniform(cfg.pop_size, mu),
        sweep_count: 0,
        seed,
        log_growth: 0.0,
        log_growth_stderr: f64::INFINITY,
    };
    let mut scratch = state.institution.clone();
    let mut acc = Welford::default();
    let total = cfg.equilibration_sweeps + cfg.measurement_sweeps;
    for sweep in 0..total {
        let Some(g_inst) = regenerate(&mut scratch, &state.asset, mu, &deg_inst, &weights, &mut rng) else {
            log::debug!("probe λ={lambda:.6e}: institution precision non-positive at sweep {sweep}");
            return Ok((ProbeOutcome::BelowEdge { sweep }, state));
        };
        std::mem::swap(&mut scratch, &mut state.institution);
        let Some(g_asset) = regenerate(&mut scratch, &state.institution, mu, &deg_asset, &weights, &mut rng) else {
            log::debug!("probe λ={lambda:.6e}: asset precision non-positive at sweep {sweep}");
            return Ok((ProbeOutcome::BelowEdge { sweep }, state));
        };
        std::mem::swap(&mut scratch, &mut state.asset);
        state.sweep_count = sweep + 1;
        if sweep < cfg.equilibration_sweeps {
            continue;
        }
        acc.push((g_inst * g_asset).ln());
        let e = acc.estimate();
        state.log_growth = e.mean;
        state.log_growth_stderr = e.stderr;
        if cfg.early_stop_sigmas > 0.0
            && acc.count() >= 20
            && e.stderr > 0.0
            && e.mean.abs() > cfg.early_stop_sigmas * e.stderr
        {
            break;
        }
    }
    log::debug!(
        "probe λ={lambda:.6e}: log-growth {:.3e} ± {:.1e} after {} sweeps, mean ω {:.4e}",
        state.log_growth,
        state.log_growth_stderr,
        state.sweep_count,
        state.asset.mean_omega()
    );
    Ok((
        ProbeOutcome::Growth {
            log_growth: state.log_growth,
            stderr: state.log_growth_stderr,
            sweeps: state.sweep_count,
        },
        state,
    ))
}

/// One bisection step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub lambda: f64,
    pub outcome: ProbeOutcome,
}

/// Result of [`replica_lambda_max`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaEstimate {
    /// `κ·λ*` where `λ*` is the located top eigenvalue of `X·Xᵀ`.
    pub estimate: EigEstimate,
    /// Final bracket on the top eigenvalue of `X·Xᵀ` (first replica).
    pub bracket: (f64, f64),
    pub probes: Vec<ProbeRecord>,
}

/// Upper end of the initial bracket: twice the top eigenvalue of `X·Xᵀ` for
/// one large sampled instance (about 2000 institutions).
pub fn bracket_upper(spec: &ApproxPhiSpec, seed: u64) -> Result<f64> {
    let m = 2000usize;
    let n = ((spec.alpha * spec.alpha) * m as f64).round().max(1.0) as usize;
    let p = ModelParams::default().with_dims(n, m).with_q(spec.q);
    let x = sample_holdings_with(&p, &spec.distribution()?, seed)?;
    let op = PhiOperator::from_holdings(x, 1.0);
    let top = lambda_max(&op, &SolverOptions { tol: 1e-6, ..Default::default() }).value;
    let wmax = spec.weights.iter().map(|w| w.0).fold(0.0f64, f64::max);
    Ok((2.0 * top).max(wmax * wmax))
}

fn bisect(spec: &ApproxPhiSpec, cfg: &PopulationConfig, seed: u64, upper: f64) -> Result<((f64, f64), Vec<ProbeRecord>, usize)> {
    let mut lo = 0.0;
    let mut hi = upper;
    let mut probes = Vec::new();
    let mut sweeps = 0;
    let mut k = 0u64;
    // Make sure the upper end really is above the edge.
    loop {
        let (outcome, state) = probe(spec, hi, cfg, derive_seed(seed, k))?;
        k += 1;
        sweeps += state.sweep_count;
        probes.push(ProbeRecord { lambda: hi, outcome });
        if !outcome.is_below_edge() {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if k > 30 {
            return Err(Error::param("replica", "could not bracket the spectral edge"));
        }
    }
    while hi - lo > cfg.bisection_tol * hi {
        let mid = 0.5 * (lo + hi);
        let (outcome, state) = probe(spec, mid, cfg, derive_seed(seed, k))?;
        k += 1;
        sweeps += state.sweep_count;
        probes.push(ProbeRecord { lambda: mid, outcome });
        if outcome.is_below_edge() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(((lo, hi), probes, sweeps))
}

/// Locates the top eigenvalue of `X·Xᵀ` in the sparse limit by bisection on
/// the growth of the cavity fields, and returns `κ` times it.
///
/// With `replicas ≥ 2` the value is the mean of independent bisections and the
/// standard error comes from their spread; otherwise it is half the final
/// bracket width. `upper` overrides the initial bracket end.
pub fn replica_lambda_max(
    spec: &ApproxPhiSpec,
    cfg: &PopulationConfig,
    seed: u64,
    upper: Option<f64>,
) -> Result<ReplicaEstimate> {
    cfg.validate()?;
    let upper = match upper {
        Some(u) => u,
        None => bracket_upper(spec, derive_seed(seed, u64::MAX))?,
    };
    let mut acc = Welford::default();
    let mut first = None;
    let mut sweeps = 0;
    for r in 0..cfg.replicas {
        let (bracket, probes, s) = bisect(spec, cfg, derive_seed(seed, r as u64), upper)?;
        sweeps += s;
        acc.push(0.5 * (bracket.0 + bracket.1));
        if first.is_none() {
            first = Some((bracket, probes));
        }
    }
    let (bracket, probes) = first.expect("at least one replica");
    let e = acc.estimate();
    let stderr = if cfg.replicas >= 2 {
        e.stderr
    } else {
        0.5 * (bracket.1 - bracket.0)
    };
    Ok(ReplicaEstimate {
        estimate: EigEstimate {
            value: spec.kappa * e.mean,
            stderr: spec.kappa * stderr,
            samples: cfg.replicas,
            method: Method::Replica,
            iterations: sweeps,
            non_converged: 0,
        },
        bracket,
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::solve_heterogeneity;

    #[test]
    fn scaling_constant_limits() {
        assert_eq!(scaling_constant(1.0, 0.0), 1.0);
        assert!((scaling_constant(1e-9, 1.0) - 1.0).abs() < 1e-9);
        assert!((scaling_constant(10.0, 100.0) - 1e-3).abs() < 1e-15);
        let mut prev = 1.0;
        for x in [0.1, 0.5, 1.0, 2.0, 5.0, 20.0] {
            let c = scaling_constant(1.0, x);
            assert!(c > 0.0 && c < prev);
            prev = c;
        }
    }

    #[test]
    fn kappa_matches_c() {
        let p = ModelParams::default();
        let s = ApproxPhiSpec::new(&p, &HeterogeneityParams::homogeneous()).unwrap();
        let g = p.impact_gain().unwrap();
        let a = p.alpha();
        assert!((s.kappa - g * a * a * s.c * s.c).abs() < 1e-15);
        assert!((s.mean_degree_asset * s.mean_degree_institution - 64.0).abs() < 1e-12);
    }

    #[test]
    fn single_entry_operator() {
        let p = ModelParams::default();
        let h = solve_heterogeneity(0.9, 7.0 / 27.0).unwrap();
        let s = ApproxPhiSpec::new(&p, &h).unwrap();
        let x = crate::sparse::CscMatrix::from_triplets(4, 4, &[(1, 2, h.big)]);
        let op = PhiOperator::new(x, s.kappa);
        let r = lambda_max(&op, &SolverOptions::default());
        assert!((r.value - s.kappa * 9.0).abs() < 1e-14 * s.kappa * 9.0 + 1e-15);
    }

    #[test]
    fn rejects_low_leverage() {
        let p = ModelParams {
            zeta: 50.0,
            ..ModelParams::default()
        };
        assert!(ApproxPhiSpec::new(&p, &HeterogeneityParams::homogeneous()).is_err());
    }

    #[test]
    fn probe_signs() {
        let p = ModelParams::default();
        let s = ApproxPhiSpec::new(&p, &HeterogeneityParams::homogeneous()).unwrap();
        let cfg = PopulationConfig::fast();
        // Top eigenvalue of X·Xᵀ is a little above q² + q/α ≈ 74 here.
        let (low, _) = probe(&s, 20.0, &cfg, 1).unwrap();
        let (high, _) = probe(&s, 300.0, &cfg, 1).unwrap();
        assert!(low.is_below_edge());
        assert!(!high.is_below_edge());
    }

    #[test]
    fn config_validation() {
        let s = ApproxPhiSpec::new(&ModelParams::default(), &HeterogeneityParams::homogeneous()).unwrap();
        let cfg = PopulationConfig {
            pop_size: 10,
            ..PopulationConfig::fast()
        };
        assert!(probe(&s, 1.0, &cfg, 0).is_err());
    }
}
