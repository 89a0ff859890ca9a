//! Run configuration read from flat dotted keys (`model.N = 200`,
//! `grid.phi.min = 0.0`, ...). Any TOML layout that flattens to those keys is
//! accepted, so `[model]` sections work as well.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{solve_heterogeneity, HeterogeneityParams, ModelParams};
use crate::replica::PopulationConfig;
use crate::spectral::{Method, Solver, SolverOptions};

/// Evenly spaced axis, both ends included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match self.n {
            0 => Vec::new(),
            1 => vec![self.min],
            n => (0..n)
                .map(|k| self.min + (self.max - self.min) * k as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Some(OutputFormat::Csv),
            "json" => Some(OutputFormat::Json),
            _ => None,
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// Settings of the `simulate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub steps: usize,
    /// Assets whose path is written to the trace CSV.
    pub record: Vec<usize>,
    /// Paths for the top-mode variance check.
    pub paths: usize,
    pub trace: bool,
    pub triplets: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            record: vec![0],
            paths: 1000,
            trace: true,
            triplets: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub model: ModelParams,
    /// Heterogeneous setting `(φ, p_B)` used by `q-sweep` and `simulate`.
    pub het_phi: f64,
    pub het_p_big: f64,
    pub phi_axis: Axis,
    pub p_big_axis: Axis,
    pub q_values: Vec<f64>,
    /// Asset counts `N` of the α regimes compared by `q-sweep`; `M` is fixed.
    pub sweep_assets: Vec<usize>,
    /// Matrix scales `d` of the gap analysis (`N·d × M·d`).
    pub scales: Vec<usize>,
    pub methods: Vec<Method>,
    pub samples: usize,
    pub seed: u64,
    /// Worker threads; `0` uses every core.
    pub workers: usize,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    pub svg: bool,
    pub replica: PopulationConfig,
    pub solver: SolverOptions,
    pub simulate: SimulateConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            model: ModelParams::default(),
            het_phi: 0.9,
            het_p_big: 7.0 / 27.0,
            phi_axis: Axis { min: 0.0, max: 0.99, n: 40 },
            p_big_axis: Axis { min: 0.025, max: 0.975, n: 40 },
            q_values: (1..=15).map(|k| 2.0 * k as f64).collect(),
            sweep_assets: vec![200, 400],
            scales: vec![1, 2, 4],
            methods: Method::ALL.to_vec(),
            samples: 200,
            seed: 1,
            workers: 0,
            out_dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
            svg: true,
            replica: PopulationConfig::fast(),
            solver: SolverOptions::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

/// Every recognized key, for error messages.
pub const KNOWN_KEYS: &[&str] = &[
    "model.N",
    "model.M",
    "model.q",
    "model.zeta",
    "model.sigma_s2",
    "model.sigma_d2",
    "model.gamma",
    "model.sigma_f2",
    "model.sigma_nu2",
    "het.phi",
    "het.p_B",
    "grid.phi.min",
    "grid.phi.max",
    "grid.phi.n",
    "grid.p_B.min",
    "grid.p_B.max",
    "grid.p_B.n",
    "grid.q.values",
    "grid.q.min",
    "grid.q.max",
    "grid.q.step",
    "qsweep.N",
    "gap.scales",
    "run.methods",
    "run.samples",
    "run.seed",
    "run.workers",
    "run.out_dir",
    "run.format",
    "run.svg",
    "replica.pop_size",
    "replica.equilibration_sweeps",
    "replica.measurement_sweeps",
    "replica.bisection_tol",
    "replica.replicas",
    "replica.early_stop_sigmas",
    "solver.kind",
    "solver.tol",
    "solver.max_iter",
    "simulate.steps",
    "simulate.record",
    "simulate.paths",
    "simulate.trace",
    "simulate.triplets",
];

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn cfg_err(key: &str, what: &str) -> Error {
    Error::Config(format!("`{key}`: {what}"))
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(cfg_err(key, "expected a number")),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(cfg_err(key, "expected a non-negative integer")),
    }
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| cfg_err(key, "expected true or false"))
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| cfg_err(key, "expected a string"))
}

fn as_f64_list(key: &str, v: &toml::Value) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| cfg_err(key, "expected an array"))?;
    arr.iter().map(|x| as_f64(key, x)).collect()
}

fn as_usize_list(key: &str, v: &toml::Value) -> Result<Vec<usize>> {
    let arr = v.as_array().ok_or_else(|| cfg_err(key, "expected an array"))?;
    arr.iter().map(|x| as_usize(key, x)).collect()
}

/// Comma-separated method names, e.g. `diagonalization,corsi`.
pub fn parse_methods(s: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for name in s.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m = Method::parse(name).ok_or_else(|| Error::Config(format!("unknown method `{name}`")))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        let mut cfg = Self::default();
        let mut q_range: (Option<f64>, Option<f64>, Option<f64>) = (None, None, None);
        for (key, v) in &flat {
            let k = key.as_str();
            match k {
                "model.N" => cfg.model.n_assets = as_usize(k, v)?,
                "model.M" => cfg.model.n_institutions = as_usize(k, v)?,
                "model.q" => cfg.model.q = as_f64(k, v)?,
                "model.zeta" => cfg.model.zeta = as_f64(k, v)?,
                "model.sigma_s2" => cfg.model.sigma_s2 = as_f64(k, v)?,
                "model.sigma_d2" => cfg.model.sigma_d2 = as_f64(k, v)?,
                "model.gamma" => cfg.model.gamma = as_f64(k, v)?,
                "model.sigma_f2" => cfg.model.sigma_f2 = as_f64(k, v)?,
                "model.sigma_nu2" => cfg.model.sigma_nu2 = as_f64(k, v)?,
                "het.phi" => cfg.het_phi = as_f64(k, v)?,
                "het.p_B" => cfg.het_p_big = as_f64(k, v)?,
                "grid.phi.min" => cfg.phi_axis.min = as_f64(k, v)?,
                "grid.phi.max" => cfg.phi_axis.max = as_f64(k, v)?,
                "grid.phi.n" => cfg.phi_axis.n = as_usize(k, v)?,
                "grid.p_B.min" => cfg.p_big_axis.min = as_f64(k, v)?,
                "grid.p_B.max" => cfg.p_big_axis.max = as_f64(k, v)?,
                "grid.p_B.n" => cfg.p_big_axis.n = as_usize(k, v)?,
                "grid.q.values" => cfg.q_values = as_f64_list(k, v)?,
                "grid.q.min" => q_range.0 = Some(as_f64(k, v)?),
                "grid.q.max" => q_range.1 = Some(as_f64(k, v)?),
                "grid.q.step" => q_range.2 = Some(as_f64(k, v)?),
                "qsweep.N" => cfg.sweep_assets = as_usize_list(k, v)?,
                "gap.scales" => cfg.scales = as_usize_list(k, v)?,
                "run.methods" => {
                    cfg.methods = match v {
                        toml::Value::String(s) => parse_methods(s)?,
                        toml::Value::Array(a) => {
                            let names: Result<Vec<&str>> = a.iter().map(|x| as_str(k, x)).collect();
                            parse_methods(&names?.join(","))?
                        }
                        _ => return Err(cfg_err(k, "expected a string or an array of strings")),
                    }
                }
                "run.samples" => cfg.samples = as_usize(k, v)?,
                "run.seed" => cfg.seed = as_usize(k, v)? as u64,
                "run.workers" => cfg.workers = as_usize(k, v)?,
                "run.out_dir" => cfg.out_dir = PathBuf::from(as_str(k, v)?),
                "run.format" => {
                    cfg.format = OutputFormat::parse(as_str(k, v)?).ok_or_else(|| cfg_err(k, "expected `csv` or `json`"))?
                }
                "run.svg" => cfg.svg = as_bool(k, v)?,
                "replica.pop_size" => cfg.replica.pop_size = as_usize(k, v)?,
                "replica.equilibration_sweeps" => cfg.replica.equilibration_sweeps = as_usize(k, v)?,
                "replica.measurement_sweeps" => cfg.replica.measurement_sweeps = as_usize(k, v)?,
                "replica.bisection_tol" => cfg.replica.bisection_tol = as_f64(k, v)?,
                "replica.replicas" => cfg.replica.replicas = as_usize(k, v)?,
                "replica.early_stop_sigmas" => cfg.replica.early_stop_sigmas = as_f64(k, v)?,
                "solver.kind" => {
                    cfg.solver.solver = match as_str(k, v)?.to_ascii_lowercase().as_str() {
                        "lanczos" => Solver::Lanczos,
                        "power" => Solver::Power,
                        _ => return Err(cfg_err(k, "expected `lanczos` or `power`")),
                    }
                }
                "solver.tol" => cfg.solver.tol = as_f64(k, v)?,
                "solver.max_iter" => cfg.solver.max_iter = Some(as_usize(k, v)?),
                "simulate.steps" => cfg.simulate.steps = as_usize(k, v)?,
                "simulate.record" => cfg.simulate.record = as_usize_list(k, v)?,
                "simulate.paths" => cfg.simulate.paths = as_usize(k, v)?,
                "simulate.trace" => cfg.simulate.trace = as_bool(k, v)?,
                "simulate.triplets" => cfg.simulate.triplets = as_bool(k, v)?,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown key `{k}` (known keys: {})",
                        KNOWN_KEYS.join(", ")
                    )))
                }
            }
        }
        match q_range {
            (None, None, None) => {}
            (Some(lo), Some(hi), step) => {
                let step = step.unwrap_or(1.0);
                if !(step > 0.0) || !(hi >= lo) {
                    return Err(Error::Config("`grid.q.*`: need min ≤ max and step > 0".into()));
                }
                let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
                cfg.q_values = (0..n).map(|k| lo + step * k as f64).collect();
            }
            _ => return Err(Error::Config("`grid.q.min` and `grid.q.max` must be given together".into())),
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Heterogeneous setting of `q-sweep` and `simulate`.
    pub fn heterogeneity(&self) -> Result<HeterogeneityParams> {
        solve_heterogeneity(self.het_phi, self.het_p_big)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.model.validate().map_err(wrap)?;
        self.heterogeneity().map_err(wrap)?;
        if self.methods.is_empty() {
            return Err(Error::Config("`run.methods` is empty".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("`run.samples` must be at least 1".into()));
        }
        for (name, axis) in [("grid.phi", &self.phi_axis), ("grid.p_B", &self.p_big_axis)] {
            if axis.n == 0 {
                return Err(Error::Config(format!("`{name}.n` must be at least 1")));
            }
            if !(axis.min <= axis.max) {
                return Err(Error::Config(format!("`{name}`: min must not exceed max")));
            }
        }
        if !(self.phi_axis.min >= 0.0 && self.phi_axis.max < 1.0) {
            return Err(Error::Config("`grid.phi` must lie in [0, 1)".into()));
        }
        if !(self.p_big_axis.min >= 0.0 && self.p_big_axis.max <= 1.0) {
            return Err(Error::Config("`grid.p_B` must lie in [0, 1]".into()));
        }
        if self.q_values.is_empty() || self.q_values.iter().any(|q| !(*q > 0.0)) {
            return Err(Error::Config("`grid.q` needs at least one positive value".into()));
        }
        if self.sweep_assets.is_empty() || self.sweep_assets.contains(&0) {
            return Err(Error::Config("`qsweep.N` needs positive asset counts".into()));
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return Err(Error::Config("`gap.scales` needs positive scales".into()));
        }
        if self.methods.contains(&Method::Replica) {
            if self.replica.pop_size < 1000 {
                return Err(Error::Config("`replica.pop_size` must be at least 1000".into()));
            }
            if self.replica.measurement_sweeps < 2 || !(self.replica.bisection_tol > 0.0) || self.replica.replicas == 0 {
                return Err(Error::Config("`replica.*`: bad population settings".into()));
            }
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config("`solver.tol` must be > 0".into()));
        }
        if let Some(&i) = self.simulate.record.iter().find(|&&i| i >= self.model.n_assets) {
            return Err(Error::Config(format!("`simulate.record`: asset {i} out of range")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_and_sectioned_keys_agree() {
        let a = SweepConfig::from_toml_str("model.N = 400\ngrid.phi.min = 0.1\nrun.methods = \"corsi\"\n").unwrap();
        let b = SweepConfig::from_toml_str("[model]\nN = 400\n[grid.phi]\nmin = 0.1\n[run]\nmethods = [\"corsi\"]\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.model.n_assets, 400);
        assert_eq!(a.methods, vec![Method::Corsi]);
    }

    #[test]
    fn unknown_key_is_rejected() {
        match SweepConfig::from_toml_str("model.n = 3") {
            Err(Error::Config(msg)) => assert!(msg.contains("model.n")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn q_range() {
        let c = SweepConfig::from_toml_str("grid.q.min = 2\ngrid.q.max = 30\ngrid.q.step = 4").unwrap();
        assert_eq!(c.q_values, vec![2.0, 6.0, 10.0, 14.0, 18.0, 22.0, 26.0, 30.0]);
        assert!(SweepConfig::from_toml_str("grid.q.min = 2").is_err());
    }

    #[test]
    fn validation() {
        assert!(SweepConfig::default().validate().is_ok());
        for text in ["run.samples = 0", "run.methods = \"\"", "grid.phi.max = 1.0", "model.zeta = 100.0", "grid.p_B.n = 0"] {
            let c = SweepConfig::from_toml_str(text).unwrap();
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{text}");
        }
        assert!(SweepConfig::from_toml_str("run.format = \"xml\"").is_err());
        assert!(SweepConfig::from_toml_str("model.N = -1").is_err());
    }

    #[test]
    fn axis_values() {
        assert_eq!(Axis { min: 0.0, max: 1.0, n: 3 }.values(), vec![0.0, 0.5, 1.0]);
        assert_eq!(Axis { min: 0.3, max: 1.0, n: 1 }.values(), vec![0.3]);
    }
}
