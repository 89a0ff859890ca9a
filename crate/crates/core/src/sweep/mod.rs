//! Phase diagrams over `(φ, p_B)`, `q`-sweeps and approximation-gap tables.
//!
//! Every cell draws its randomness from `derive_seed(seed, cell_index)` and
//! cells are collected in index order, so outputs do not depend on the
//! number of workers.

pub mod config;
pub mod output;

use serde::{Deserialize, Serialize};

use crate::corsi::corsi_lambda_max;
use crate::error::{Error, Result};
use crate::network::{sample_holdings, to_weights};
use crate::params::{solve_heterogeneity, DerivedScalars, HeterogeneityParams, ModelParams};
use crate::pool::map_indexed;
use crate::replica::{replica_lambda_max, ApproxPhiSpec};
use crate::rng::derive_seed;
use crate::spectral::{lambda_max, mc_lambda_max, EigEstimate, McOptions, Method, PhiOperator};
use crate::stats::{Estimate, Welford};

pub use config::{Axis, OutputFormat, SimulateConfig, SweepConfig};

/// Stability of one estimate relative to the threshold `λ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Stable,
    Unstable,
    /// Within two standard errors of the threshold.
    Indeterminate,
}

impl Stability {
    pub fn of(e: &EigEstimate) -> Self {
        if (e.value - 1.0).abs() < 2.0 * e.stderr {
            Stability::Indeterminate
        } else if e.value > 1.0 {
            Stability::Unstable
        } else {
            Stability::Stable
        }
    }
}

/// Agreement of an approximate verdict with the diagonalization truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    TrueUnstable,
    /// Unstable market reported as stable: the dangerous miss.
    FalseStable,
    /// Stable market reported as unstable.
    FalseUnstable,
    TrueStable,
    Indeterminate,
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::TrueUnstable => "true-unstable",
            Verdict::FalseStable => "false-stable",
            Verdict::FalseUnstable => "false-unstable",
            Verdict::TrueStable => "true-stable",
            Verdict::Indeterminate => "indeterminate",
        }
    }

    pub fn from_states(truth: Stability, approx: Stability) -> Self {
        match (truth, approx) {
            (Stability::Indeterminate, _) | (_, Stability::Indeterminate) => Verdict::Indeterminate,
            (Stability::Unstable, Stability::Unstable) => Verdict::TrueUnstable,
            (Stability::Unstable, Stability::Stable) => Verdict::FalseStable,
            (Stability::Stable, Stability::Unstable) => Verdict::FalseUnstable,
            (Stability::Stable, Stability::Stable) => Verdict::TrueStable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellClassification {
    pub truth: Stability,
    pub verdicts: Vec<(Method, Verdict)>,
}

impl CellClassification {
    pub fn verdict(&self, m: Method) -> Option<Verdict> {
        self.verdicts.iter().find(|v| v.0 == m).map(|v| v.1)
    }
}

/// One evaluated parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub index: usize,
    /// Heterogeneity coordinates; `None` outside phase diagrams.
    pub phi: Option<f64>,
    pub p_big: Option<f64>,
    pub q: f64,
    pub n_assets: usize,
    pub n_institutions: usize,
    /// `grid`, `homogeneous` or `heterogeneous`.
    pub setting: String,
    pub heterogeneity: Option<HeterogeneityParams>,
    pub derived: Option<DerivedScalars>,
    pub estimates: Vec<EigEstimate>,
    pub failures: Vec<String>,
    pub classification: Option<CellClassification>,
}

impl CellResult {
    pub fn estimate(&self, m: Method) -> Option<&EigEstimate> {
        self.estimates.iter().find(|e| e.method == m)
    }

    pub fn alpha(&self) -> f64 {
        (self.n_assets as f64 / self.n_institutions as f64).sqrt()
    }
}

/// Four-way label per approximate method; `MissingTruth` without a
/// diagonalization estimate.
pub fn classify(cell: &CellResult) -> Result<CellClassification> {
    let truth = Stability::of(cell.estimate(Method::Diagonalization).ok_or(Error::MissingTruth)?);
    let verdicts = cell
        .estimates
        .iter()
        .filter(|e| e.method != Method::Diagonalization)
        .map(|e| (e.method, Verdict::from_states(truth, Stability::of(e))))
        .collect();
    Ok(CellClassification { truth, verdicts })
}

/// Counts of each label for one approximate method.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationCounts {
    pub true_unstable: usize,
    pub false_stable: usize,
    pub false_unstable: usize,
    pub true_stable: usize,
    pub indeterminate: usize,
}

impl ClassificationCounts {
    pub fn tally(cells: &[CellResult], m: Method) -> Self {
        let mut c = Self::default();
        for v in cells.iter().filter_map(|cell| cell.classification.as_ref()?.verdict(m)) {
            match v {
                Verdict::TrueUnstable => c.true_unstable += 1,
                Verdict::FalseStable => c.false_stable += 1,
                Verdict::FalseUnstable => c.false_unstable += 1,
                Verdict::TrueStable => c.true_stable += 1,
                Verdict::Indeterminate => c.indeterminate += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.true_unstable + self.false_stable + self.false_unstable + self.true_stable + self.indeterminate
    }
}

/// Evaluates every requested method at one parameter point. Failures are
/// recorded in the cell rather than returned.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_cell(
    index: usize,
    p: &ModelParams,
    het: Result<HeterogeneityParams>,
    cfg: &SweepConfig,
    seed: u64,
    setting: &str,
    phi: Option<f64>,
    p_big: Option<f64>,
) -> CellResult {
    let mut cell = CellResult {
        index,
        phi,
        p_big,
        q: p.q,
        n_assets: p.n_assets,
        n_institutions: p.n_institutions,
        setting: setting.to_string(),
        heterogeneity: None,
        derived: None,
        estimates: Vec::new(),
        failures: Vec::new(),
        classification: None,
    };
    let h = match het.and_then(|h| p.validate().map(|_| h)) {
        Ok(h) => h,
        Err(e) => {
            cell.failures.push(e.to_string());
            return cell;
        }
    };
    cell.heterogeneity = Some(h);
    match DerivedScalars::compute(p, &h) {
        Ok(d) => cell.derived = Some(d),
        Err(e) => {
            cell.failures.push(e.to_string());
            return cell;
        }
    }
    let opts = McOptions {
        solver: cfg.solver,
        workers: 1,
    };
    for &m in &cfg.methods {
        let r = match m {
            Method::Diagonalization => mc_lambda_max(p, &h, cfg.samples, derive_seed(seed, 0), &opts),
            Method::Corsi => corsi_lambda_max(p, h.second_moment()).map(|v| EigEstimate::exact(v, Method::Corsi)),
            Method::Replica => ApproxPhiSpec::new(p, &h)
                .and_then(|spec| replica_lambda_max(&spec, &cfg.replica, derive_seed(seed, 2), None))
                .map(|r| r.estimate),
        };
        match r {
            Ok(e) if e.value.is_finite() => cell.estimates.push(e),
            Ok(e) => cell.failures.push(format!("{m}: non-finite estimate {}", e.value)),
            Err(e) => cell.failures.push(format!("{m}: {e}")),
        }
    }
    if cell.estimate(Method::Diagonalization).is_some() {
        cell.classification = classify(&cell).ok();
    }
    log::debug!("cell {index} ({setting}, q={}) done: {} estimates, {} failures", p.q, cell.estimates.len(), cell.failures.len());
    cell
}

/// A point where an estimate crosses `λ = 1` between two adjacent `φ` rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub p_big: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub method: Method,
    pub points: Vec<ContourPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub phi: Vec<f64>,
    pub p_big: Vec<f64>,
    /// Row-major in `φ`: cell `i·n_pB + j` sits at `(phi[i], p_big[j])`.
    pub cells: Vec<CellResult>,
    pub contours: Vec<Contour>,
    pub counts: Vec<(Method, ClassificationCounts)>,
}

impl PhaseDiagram {
    pub fn cell(&self, i_phi: usize, i_pb: usize) -> &CellResult {
        &self.cells[i_phi * self.p_big.len() + i_pb]
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| !c.failures.is_empty()).count()
    }
}

/// `λ = 1` crossings along each `p_B` column, by linear interpolation in `φ`.
pub fn extract_contour(phi: &[f64], p_big: &[f64], cells: &[CellResult], m: Method) -> Contour {
    let mut points = Vec::new();
    let n_pb = p_big.len();
    for (j, &pb) in p_big.iter().enumerate() {
        for i in 0..phi.len().saturating_sub(1) {
            let a = cells[i * n_pb + j].estimate(m).map(|e| e.value);
            let b = cells[(i + 1) * n_pb + j].estimate(m).map(|e| e.value);
            if let (Some(a), Some(b)) = (a, b) {
                if (a - 1.0) * (b - 1.0) < 0.0 || (a != 1.0 && b == 1.0) {
                    let t = (1.0 - a) / (b - a);
                    points.push(ContourPoint {
                        p_big: pb,
                        phi: phi[i] + t * (phi[i + 1] - phi[i]),
                    });
                }
            }
        }
    }
    Contour { method: m, points }
}

pub fn run_phase_diagram(cfg: &SweepConfig) -> Result<PhaseDiagram> {
    cfg.validate()?;
    let phi = cfg.phi_axis.values();
    let p_big = cfg.p_big_axis.values();
    let n_pb = p_big.len();
    let total = phi.len() * n_pb;
    log::info!("phase diagram: {} × {} cells, methods {:?}, {} samples", phi.len(), n_pb, cfg.methods, cfg.samples);
    let cells = map_indexed(total, cfg.workers, |k| {
        let (f, pb) = (phi[k / n_pb], p_big[k % n_pb]);
        evaluate_cell(
            k,
            &cfg.model,
            solve_heterogeneity(f, pb),
            cfg,
            derive_seed(cfg.seed, k as u64),
            "grid",
            Some(f),
            Some(pb),
        )
    });
    let contours = cfg.methods.iter().map(|&m| extract_contour(&phi, &p_big, &cells, m)).collect();
    let counts = cfg
        .methods
        .iter()
        .filter(|&&m| m != Method::Diagonalization)
        .map(|&m| (m, ClassificationCounts::tally(&cells, m)))
        .collect();
    Ok(PhaseDiagram {
        phi,
        p_big,
        cells,
        contours,
        counts,
    })
}

/// `E[λmax](q)` for one α regime, setting and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub n_assets: usize,
    pub n_institutions: usize,
    pub setting: String,
    pub method: Method,
    pub q: Vec<f64>,
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    pub argmin_q: Option<f64>,
}

impl Curve {
    pub fn alpha(&self) -> f64 {
        (self.n_assets as f64 / self.n_institutions as f64).sqrt()
    }

    /// Whether the minimum lies strictly inside the sampled `q` range.
    pub fn has_interior_minimum(&self) -> bool {
        match self.argmin_q {
            Some(q) => self.q.first() != Some(&q) && self.q.last() != Some(&q),
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSweep {
    pub cells: Vec<CellResult>,
    pub curves: Vec<Curve>,
}

impl QSweep {
    pub fn curve(&self, n_assets: usize, setting: &str, m: Method) -> Option<&Curve> {
        self.curves
            .iter()
            .find(|c| c.n_assets == n_assets && c.setting == setting && c.method == m)
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| !c.failures.is_empty()).count()
    }
}

fn settings(cfg: &SweepConfig) -> Vec<(&'static str, Result<HeterogeneityParams>)> {
    vec![
        ("homogeneous", Ok(HeterogeneityParams::homogeneous())),
        ("heterogeneous", cfg.heterogeneity()),
    ]
}

/// Homogeneous and heterogeneous curves over `q` for every asset count in
/// `sweep_assets` (with `M` from the base model).
pub fn run_q_sweep(cfg: &SweepConfig) -> Result<QSweep> {
    cfg.validate()?;
    if cfg.q_values.len() < 3 {
        return Err(Error::Config("a q-sweep needs at least 3 values of q".into()));
    }
    let settings = settings(cfg);
    let nq = cfg.q_values.len();
    let per_regime = settings.len() * nq;
    let total = cfg.sweep_assets.len() * per_regime;
    log::info!("q-sweep: {total} cells, methods {:?}, {} samples", cfg.methods, cfg.samples);
    let cells = map_indexed(total, cfg.workers, |k| {
        let n = cfg.sweep_assets[k / per_regime];
        let (name, het) = &settings[(k % per_regime) / nq];
        let q = cfg.q_values[k % nq];
        let p = cfg.model.with_dims(n, cfg.model.n_institutions).with_q(q);
        let het = match het {
            Ok(h) => Ok(*h),
            Err(e) => Err(Error::Heterogeneity(e.to_string())),
        };
        evaluate_cell(k, &p, het, cfg, derive_seed(cfg.seed, k as u64), name, None, None)
    });
    let mut curves = Vec::new();
    for (r, &n) in cfg.sweep_assets.iter().enumerate() {
        for (s, (name, _)) in settings.iter().enumerate() {
            let block = &cells[r * per_regime + s * nq..r * per_regime + (s + 1) * nq];
            for &m in &cfg.methods {
                let mut curve = Curve {
                    n_assets: n,
                    n_institutions: cfg.model.n_institutions,
                    setting: name.to_string(),
                    method: m,
                    q: Vec::new(),
                    value: Vec::new(),
                    stderr: Vec::new(),
                    argmin_q: None,
                };
                for c in block {
                    if let Some(e) = c.estimate(m) {
                        curve.q.push(c.q);
                        curve.value.push(e.value);
                        curve.stderr.push(e.stderr);
                    }
                }
                curve.argmin_q = curve
                    .value
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| curve.q[i]);
                curves.push(curve);
            }
        }
    }
    Ok(QSweep { cells, curves })
}

/// Approximation gaps at one `(setting, d, q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub index: usize,
    pub setting: String,
    pub scale: usize,
    pub n_assets: usize,
    pub n_institutions: usize,
    pub q: f64,
    /// `E[λmax(Φ)]`.
    pub diagonalization: Estimate,
    /// `E[λmax(κ·X·Xᵀ)]` on the same samples.
    pub surrogate: Estimate,
    pub corsi: f64,
    /// `(λ̃ − E[λmax])/E[λmax]` and its delta-method standard error.
    pub corsi_gap: f64,
    pub corsi_gap_stderr: f64,
    /// Mean over samples of `(λmax(κXXᵀ) − λmax(Φ))/λmax(Φ)`.
    pub surrogate_gap: Estimate,
    /// Population-dynamics estimate and its gap, when requested.
    pub replica: Option<EigEstimate>,
    pub replica_gap: Option<f64>,
    pub failure: Option<String>,
}

fn gap_row(
    index: usize,
    setting: &str,
    h: &HeterogeneityParams,
    scale: usize,
    q: f64,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<GapRow> {
    let p = cfg
        .model
        .with_dims(cfg.model.n_assets * scale, cfg.model.n_institutions * scale)
        .with_q(q);
    p.validate()?;
    let spec = ApproxPhiSpec::new(&p, h)?;
    let kappa0 = p.phi_prefactor()?;
    let mut diag = Welford::default();
    let mut surr = Welford::default();
    let mut gap = Welford::default();
    for k in 0..cfg.samples {
        let x = sample_holdings(&p, h, derive_seed(seed, k as u64))?;
        let exact = lambda_max(&PhiOperator::from_weights(to_weights(&x), kappa0), &cfg.solver).value;
        let approx = lambda_max(&PhiOperator::from_holdings(x, spec.kappa), &cfg.solver).value;
        diag.push(exact);
        surr.push(approx);
        gap.push((approx - exact) / exact);
    }
    let d = diag.estimate();
    let corsi = corsi_lambda_max(&p, h.second_moment())?;
    let replica = if cfg.methods.contains(&Method::Replica) {
        Some(replica_lambda_max(&spec, &cfg.replica, derive_seed(seed, u64::MAX - 1), None)?.estimate)
    } else {
        None
    };
    Ok(GapRow {
        index,
        setting: setting.to_string(),
        scale,
        n_assets: p.n_assets,
        n_institutions: p.n_institutions,
        q,
        diagonalization: d,
        surrogate: surr.estimate(),
        corsi,
        corsi_gap: (corsi - d.mean) / d.mean,
        corsi_gap_stderr: corsi * d.stderr / (d.mean * d.mean),
        surrogate_gap: gap.estimate(),
        replica_gap: replica.map(|r| (r.value - d.mean) / d.mean),
        replica,
        failure: None,
    })
}

/// Relative gaps of the expected-matrix closed form and of the `κ·X·Xᵀ`
/// surrogate against diagonalization, for every setting, scale and `q`.
pub fn run_gap_analysis(cfg: &SweepConfig, scales: &[usize]) -> Result<Vec<GapRow>> {
    cfg.validate()?;
    if scales.is_empty() || scales.contains(&0) {
        return Err(Error::Config("gap analysis needs positive scales".into()));
    }
    let settings = settings(cfg);
    let nq = cfg.q_values.len();
    let per_setting = scales.len() * nq;
    let total = settings.len() * per_setting;
    log::info!("gap analysis: {total} rows, {} paired samples each", cfg.samples);
    let rows = map_indexed(total, cfg.workers, |k| {
        let (name, het) = &settings[k / per_setting];
        let scale = scales[(k % per_setting) / nq];
        let q = cfg.q_values[k % nq];
        let r = match het {
            Ok(h) => gap_row(k, name, h, scale, q, cfg, derive_seed(cfg.seed, k as u64)),
            Err(e) => Err(Error::Heterogeneity(e.to_string())),
        };
        let missing = Estimate {
            mean: f64::NAN,
            stderr: f64::NAN,
            samples: 0,
        };
        r.unwrap_or_else(|e| GapRow {
            index: k,
            setting: name.to_string(),
            scale,
            n_assets: cfg.model.n_assets * scale,
            n_institutions: cfg.model.n_institutions * scale,
            q,
            diagonalization: missing,
            surrogate: missing,
            corsi: f64::NAN,
            corsi_gap: f64::NAN,
            corsi_gap_stderr: f64::NAN,
            surrogate_gap: missing,
            replica: None,
            replica_gap: None,
            failure: Some(e.to_string()),
        })
    });
    Ok(rows)
}
