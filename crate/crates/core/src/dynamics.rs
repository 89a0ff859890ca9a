//! Time-domain checks: the linear endogenous-return process
//! `e_t = Φ(e_{t−1} + ε_t)` and an agent-based balance-sheet simulation that
//! reduces to it when every institution has the same size.

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{sample_holdings, to_weights, PortfolioWeights};
use crate::params::{target_leverage, HeterogeneityParams, ModelParams};
use crate::pool::map_indexed;
use crate::rng::{derive_seed, stream_rng};
use crate::sparse::CscMatrix;
use crate::spectral::{lambda_max, PhiOperator, SolverOptions};
use crate::stats::{Estimate, Welford};

/// Any `|e_i|` above this raises the divergence flag.
pub const DIVERGENCE_BOUND: f64 = 1e150;

/// Endogenous returns at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub e: Vec<f64>,
    pub t: usize,
    pub diverged: bool,
}

impl MarketState {
    pub fn new(n: usize) -> Self {
        Self {
            e: vec![0.0; n],
            t: 0,
            diverged: false,
        }
    }

    pub fn from_returns(e: Vec<f64>) -> Self {
        Self { e, t: 0, diverged: false }
    }

    pub fn max_abs(&self) -> f64 {
        self.e.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Exogenous shocks `ε_{i,t} = f_i + ν_{i,t}`; `f` is drawn once per path.
#[derive(Debug, Clone)]
pub struct ShockModel {
    pub sigma_f2: f64,
    pub sigma_nu2: f64,
    pub factor: Vec<f64>,
    noise: Normal<f64>,
    rng: ChaCha8Rng,
}

impl ShockModel {
    pub fn new(n: usize, sigma_f2: f64, sigma_nu2: f64, seed: u64) -> Result<Self> {
        if !(sigma_f2 >= 0.0) || !(sigma_nu2 >= 0.0) {
            return Err(Error::param("sigma", "shock variances must be non-negative"));
        }
        let mut rng = stream_rng(seed, 1);
        let f = Normal::new(0.0, sigma_f2.sqrt()).map_err(|e| Error::param("sigma_f2", e.to_string()))?;
        let factor = (0..n).map(|_| f.sample(&mut rng)).collect();
        Ok(Self {
            sigma_f2,
            sigma_nu2,
            factor,
            noise: Normal::new(0.0, sigma_nu2.sqrt()).map_err(|e| Error::param("sigma_nu2", e.to_string()))?,
            rng,
        })
    }

    pub fn from_params(p: &ModelParams, seed: u64) -> Result<Self> {
        Self::new(p.n_assets, p.sigma_f2, p.sigma_nu2, seed)
    }

    /// `Var(ε_{i,t})`.
    pub fn variance(&self) -> f64 {
        self.sigma_f2 + self.sigma_nu2
    }

    pub fn draw(&mut self) -> Vec<f64> {
        let noise = self.noise;
        self.factor.iter().map(|f| f + noise.sample(&mut self.rng)).collect()
    }
}

/// `e_t = Φ(e_{t−1} + ε_t)`.
pub fn linear_step(state: &MarketState, op: &PhiOperator, shock: &[f64]) -> Result<MarketState> {
    let n = op.dim();
    for len in [state.e.len(), shock.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    let r: Vec<f64> = state.e.iter().zip(shock).map(|(e, s)| e + s).collect();
    let e = op.apply(&r);
    let diverged = state.diverged || e.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND);
    Ok(MarketState {
        e,
        t: state.t + 1,
        diverged,
    })
}

/// Balance sheets of the `M` institutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankLedger {
    /// Assets `A_j` held after the last rebalance.
    pub assets: Vec<f64>,
    pub equity: Vec<f64>,
    /// Target sizes `A*_j = η·E_j` set at the last rebalance.
    pub target: Vec<f64>,
    pub eta: f64,
    pub gamma: f64,
}

impl BankLedger {
    /// Institutions already at their leverage target: `A_j = A*_j`,
    /// `E_j = A*_j/η`.
    pub fn at_target(target: Vec<f64>, eta: f64, gamma: f64) -> Result<Self> {
        if !(eta > 1.0) {
            return Err(Error::LeverageTooLow { eta });
        }
        if let Some(j) = target.iter().position(|a| !(*a > 0.0)) {
            return Err(Error::Insolvent {
                institution: j,
                equity: target[j] / eta,
            });
        }
        Ok(Self {
            assets: target.clone(),
            equity: target.iter().map(|a| a / eta).collect(),
            target,
            eta,
            gamma,
        })
    }

    pub fn homogeneous(m: usize, size: f64, eta: f64, gamma: f64) -> Result<Self> {
        Self::at_target(vec![size; m], eta, gamma)
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Average target size `Ā*`.
    pub fn mean_target(&self) -> f64 {
        self.target.iter().sum::<f64>() / self.len() as f64
    }

    pub fn leverage(&self) -> Vec<f64> {
        self.assets.iter().zip(&self.equity).map(|(a, e)| a / e).collect()
    }
}

/// Output of one [`agent_step`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    /// Portfolio returns `r^p = Wᵀ·r`.
    pub portfolio_returns: Vec<f64>,
    /// Amount `D_j` each institution trades.
    pub institution_demand: Vec<f64>,
    /// Net volume `d_i` traded in each asset.
    pub asset_demand: Vec<f64>,
    /// Market capitalization estimate `χ = Ā*/α²` shared by all assets.
    pub chi: f64,
    /// Endogenous returns `e_i = d_i/(γ·χ)`.
    pub returns: Vec<f64>,
    pub ledger: BankLedger,
}

/// One rebalancing round given asset returns `r_t`.
///
/// Portfolio returns move equity and assets, every institution trades back to
/// `A* = η·E` in proportion to its weights, and the resulting volumes move
/// prices through linear impact. Fails with [`Error::Insolvent`] on the first
/// institution whose equity is no longer positive.
pub fn agent_step(ledger: &BankLedger, weights: &PortfolioWeights, r: &[f64], alpha: f64) -> Result<AgentStep> {
    let w = &weights.matrix;
    if r.len() != w.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: w.n_rows(),
            got: r.len(),
        });
    }
    if ledger.len() != w.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: w.n_cols(),
            got: ledger.len(),
        });
    }
    let m = ledger.len();
    let mut rp = vec![0.0; m];
    w.transpose_apply(r, &mut rp);
    let em1 = ledger.eta - 1.0;
    let demand: Vec<f64> = rp.iter().zip(&ledger.target).map(|(rp, a)| rp * a * em1).collect();
    let mut d = vec![0.0; w.n_rows()];
    w.apply(&demand, &mut d);
    let chi = ledger.mean_target() / (alpha * alpha);
    let scale = 1.0 / (ledger.gamma * chi);
    let returns = d.iter().map(|v| v * scale).collect();

    let mut next = ledger.clone();
    for (j, &rpj) in rp.iter().enumerate() {
        let gain = rpj * ledger.target[j];
        let equity = ledger.equity[j] + gain;
        if !(equity > 0.0) {
            return Err(Error::Insolvent { institution: j, equity });
        }
        next.equity[j] = equity;
        next.target[j] = ledger.eta * equity;
        next.assets[j] = next.target[j];
    }
    Ok(AgentStep {
        portfolio_returns: rp,
        institution_demand: demand,
        asset_demand: d,
        chi,
        returns,
        ledger: next,
    })
}

/// Holdings after every institution trades `D_j` in proportion to its
/// current weights: `X'_ij = X_ij·(1 + D_j/Σ_r X_rj)`.
pub fn trade_holdings(x: &CscMatrix, institution_demand: &[f64]) -> Result<CscMatrix> {
    if institution_demand.len() != x.n_cols() {
        return Err(Error::DimensionMismatch {
            expected: x.n_cols(),
            got: institution_demand.len(),
        });
    }
    Ok(x.map_columns(|j, src, dst| {
        let total: f64 = src.iter().sum();
        if total > 0.0 {
            let f = 1.0 + institution_demand[j] / total;
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s * f;
            }
        }
    }))
}

/// How balance sheets evolve between steps in [`linearization_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LedgerPolicy {
    /// Profits and losses accumulate in equity, so target sizes drift apart.
    Evolving,
    /// Equity is reset to its initial value after each round, keeping every
    /// `A*_j` fixed.
    Recapitalized,
}

/// Initial institution sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SizeProfile {
    Equal,
    /// `A*_j = 1 + rel·u_j` with `u_j` uniform on `[−1, 1]`.
    Uniform(f64),
    /// `A*_j = exp(σ·z_j)` with standard normal `z_j`.
    LogNormal(f64),
}

impl SizeProfile {
    fn sample(&self, m: usize, seed: u64) -> Result<Vec<f64>> {
        let mut rng = stream_rng(seed, 2);
        Ok(match *self {
            SizeProfile::Equal => vec![1.0; m],
            SizeProfile::Uniform(rel) => {
                let u = rand_distr::Uniform::new_inclusive(-1.0, 1.0).map_err(|e| Error::param("profile", e.to_string()))?;
                (0..m).map(|_| 1.0 + rel * u.sample(&mut rng)).collect()
            }
            SizeProfile::LogNormal(sigma) => {
                let z = Normal::new(0.0, sigma).map_err(|e| Error::param("profile", e.to_string()))?;
                (0..m).map(|_| z.sample(&mut rng).exp()).collect()
            }
        })
    }
}

/// Per-step comparison of agent-based and linear endogenous returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationReport {
    /// `max_i |e^agent_i − e^linear_i| / max_i |e^linear_i|` at each step.
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
}

/// Drives the agent model and the linear process with the same shocks and
/// reports their per-step relative deviation. Each process feeds back its own
/// returns, `r_t = e_{t−1} + ε_t`.
pub fn linearization_check(
    p: &ModelParams,
    h: &HeterogeneityParams,
    seed: u64,
    horizon: usize,
    profile: SizeProfile,
    policy: LedgerPolicy,
) -> Result<LinearizationReport> {
    let x = sample_holdings(p, h, seed)?;
    let w = to_weights(&x);
    let eta = target_leverage(p)?;
    let alpha = p.alpha();
    let op = PhiOperator::from_weights(w.clone(), p.phi_prefactor()?);
    let initial = BankLedger::at_target(profile.sample(p.n_institutions, seed)?, eta, p.gamma)?;
    let mut ledger = initial.clone();
    let mut shocks = ShockModel::from_params(p, seed)?;
    let mut lin = MarketState::new(p.n_assets);
    let mut agent = vec![0.0; p.n_assets];
    let mut deviations = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let eps = shocks.draw();
        let r: Vec<f64> = agent.iter().zip(&eps).map(|(e, s)| e + s).collect();
        let step = agent_step(&ledger, &w, &r, alpha)?;
        ledger = match policy {
            LedgerPolicy::Evolving => step.ledger,
            LedgerPolicy::Recapitalized => initial.clone(),
        };
        agent = step.returns;
        lin = linear_step(&lin, &op, &eps)?;
        let scale = lin.max_abs();
        let diff = agent.iter().zip(&lin.e).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        deviations.push(if scale > 0.0 { diff / scale } else { diff });
    }
    let max_deviation = deviations.iter().copied().fold(0.0, f64::max);
    Ok(LinearizationReport {
        deviations,
        max_deviation,
    })
}

/// `σ²·Σ_{j=1}^{t} λ^{2j}`: variance of a mode with eigenvalue `λ` after `t`
/// steps when shocks are independent in time.
pub fn geometric_variance(lambda: f64, shock_variance: f64, t: usize) -> f64 {
    let l2 = lambda * lambda;
    let mut term = 1.0;
    let mut sum = 0.0;
    for _ in 0..t {
        term *= l2;
        sum += term;
    }
    shock_variance * sum
}

/// Same as [`geometric_variance`] but with the static factor `f_i` treated as
/// what it is, a shock repeated at every step: the factor part sums
/// coherently, `σ_f²·(Σ_{j=1}^{t} λ^j)²`.
pub fn static_factor_variance(lambda: f64, sigma_f2: f64, sigma_nu2: f64, t: usize) -> f64 {
    let mut term = 1.0;
    let mut lin = 0.0;
    for _ in 0..t {
        term *= lambda;
        lin += term;
    }
    geometric_variance(lambda, sigma_nu2, t) + sigma_f2 * lin * lin
}

/// Empirical variance of the top-mode projection `vᵀe_t` of the linear
/// process started from `e_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeVariance {
    pub lambda: f64,
    pub horizon: usize,
    pub empirical: Estimate,
    /// Variance estimate with its standard error (normal approximation).
    pub empirical_variance: f64,
    pub variance_stderr: f64,
    pub geometric: f64,
    pub static_factor: f64,
}

pub fn top_mode_variance(
    op: &PhiOperator,
    sigma_f2: f64,
    sigma_nu2: f64,
    paths: usize,
    horizon: usize,
    seed: u64,
    workers: usize,
) -> Result<ModeVariance> {
    if paths < 2 {
        return Err(Error::param("paths", "need at least 2 paths"));
    }
    let top = lambda_max(op, &SolverOptions::default());
    let v = top.vector;
    let n = op.dim();
    let finals = map_indexed(paths, workers, |k| -> Result<f64> {
        let mut shocks = ShockModel::new(n, sigma_f2, sigma_nu2, derive_seed(seed, k as u64))?;
        let mut s = MarketState::new(n);
        for _ in 0..horizon {
            s = linear_step(&s, op, &shocks.draw())?;
        }
        Ok(s.e.iter().zip(&v).map(|(a, b)| a * b).sum())
    });
    let mut acc = Welford::default();
    let mut sq = Welford::default();
    for f in finals {
        let f = f?;
        acc.push(f);
        sq.push(f * f);
    }
    let var = acc.variance();
    Ok(ModeVariance {
        lambda: top.value,
        horizon,
        empirical: acc.estimate(),
        empirical_variance: var,
        variance_stderr: var * (2.0 / (paths as f64 - 1.0)).sqrt(),
        geometric: geometric_variance(top.value, sigma_f2 + sigma_nu2, horizon),
        static_factor: static_factor_variance(top.value, sigma_f2, sigma_nu2, horizon),
    })
}

/// One simulated path of the linear process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTrace {
    /// Recorded assets.
    pub assets: Vec<usize>,
    /// `e_t` of the recorded assets, one row per step.
    pub values: Vec<Vec<f64>>,
    pub diverged_at: Option<usize>,
}

/// Runs the linear process for `steps` steps from `e_0 = 0` (or `start`).
/// Stops early once the divergence flag is raised.
pub fn simulate_linear(
    op: &PhiOperator,
    shocks: &mut ShockModel,
    steps: usize,
    start: Option<Vec<f64>>,
    record: &[usize],
) -> Result<(MarketState, PathTrace)> {
    let n = op.dim();
    if let Some(&bad) = record.iter().find(|&&i| i >= n) {
        return Err(Error::param("record", format!("asset {bad} out of range")));
    }
    let mut s = match start {
        Some(e) => MarketState::from_returns(e),
        None => MarketState::new(n),
    };
    let mut trace = PathTrace {
        assets: record.to_vec(),
        values: Vec::with_capacity(steps),
        diverged_at: None,
    };
    for _ in 0..steps {
        s = linear_step(&s, op, &shocks.draw())?;
        trace.values.push(record.iter().map(|&i| s.e[i]).collect());
        if s.diverged {
            trace.diverged_at = Some(s.t);
            break;
        }
    }
    Ok((s, trace))
}

/// CSV with columns `t,asset,e,running_var`; the running variance is over
/// time for each asset.
pub fn write_path_csv<W: Write>(out: &mut W, trace: &PathTrace) -> Result<()> {
    writeln!(out, "t,asset,e,running_var")?;
    let mut acc = vec![Welford::default(); trace.assets.len()];
    for (t, row) in trace.values.iter().enumerate() {
        for (k, (&asset, &e)) in trace.assets.iter().zip(row).enumerate() {
            acc[k].push(e);
            writeln!(out, "{},{},{:e},{:e}", t + 1, asset, e, acc[k].variance())?;
        }
    }
    Ok(())
}
