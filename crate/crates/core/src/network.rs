//! Sampling of the sparse holdings matrix `X` and the column-stochastic
//! portfolio weights `W`.

use std::borrow::Borrow;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{HeterogeneityParams, ModelParams};
use crate::rng::stream_rng;
use crate::sparse::CscMatrix;
use crate::stats::{Estimate, Welford};

/// Discrete distribution of investment sizes `p(K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDistribution {
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl WeightDistribution {
    /// Arbitrary discrete law. Probabilities are renormalized; values must be
    /// strictly positive.
    pub fn discrete(atoms: &[(f64, f64)]) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::param("weights", "empty distribution"));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if !(total > 0.0) {
            return Err(Error::param("weights", "probabilities sum to zero"));
        }
        let mut acc = 0.0;
        let mut values = Vec::with_capacity(atoms.len());
        let mut cumulative = Vec::with_capacity(atoms.len());
        for &(v, p) in atoms {
            if !(v > 0.0) || !(p >= 0.0) {
                return Err(Error::param("weights", format!("bad atom ({v}, {p})")));
            }
            acc += p / total;
            values.push(v);
            cumulative.push(acc);
        }
        Ok(Self { values, cumulative })
    }

    /// `B` with probability `p_B`, otherwise `s`.
    pub fn two_point(h: &HeterogeneityParams) -> Self {
        Self {
            values: vec![h.big, h.small],
            cumulative: vec![h.p_big, 1.0],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let k = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.values.len() - 1);
        self.values[k]
    }

    /// `E[K²]`.
    pub fn second_moment(&self) -> f64 {
        let mut prev = 0.0;
        self.values
            .iter()
            .zip(&self.cumulative)
            .map(|(&v, &c)| {
                let p = c - prev;
                prev = c;
                p * v * v
            })
            .sum()
    }
}

/// The `N × M` holdings matrix: `X_ij` is the amount institution `j` invested
/// in asset `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldingsMatrix {
    pub matrix: CscMatrix,
    pub seed: u64,
}

impl HoldingsMatrix {
    pub fn n_assets(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn n_institutions(&self) -> usize {
        self.matrix.n_cols()
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }
}

/// Column-stochastic portfolio weights `W_ij = X_ij / Σ_l X_lj`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioWeights {
    pub matrix: CscMatrix,
    /// Institutions without any investment; their column is all zero.
    pub empty_columns: Vec<usize>,
}

impl PortfolioWeights {
    pub fn n_assets(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn n_institutions(&self) -> usize {
        self.matrix.n_cols()
    }
}

/// Samples `X` with every link present independently with probability
/// `q/√(NM)` and sizes drawn from the two-point law of `h`. Deterministic in
/// `seed`.
pub fn sample_holdings(p: &ModelParams, h: &HeterogeneityParams, seed: u64) -> Result<HoldingsMatrix> {
    sample_holdings_with(p, &WeightDistribution::two_point(h), seed)
}

/// Same as [`sample_holdings`] with an arbitrary size distribution.
///
/// Links are generated column by column with geometric gaps, so the cost is
/// `O(M + nnz)` and no `N × M` buffer is ever allocated.
pub fn sample_holdings_with(p: &ModelParams, weights: &WeightDistribution, seed: u64) -> Result<HoldingsMatrix> {
    let prob = p.link_probability()?;
    let (n, m) = (p.n_assets, p.n_institutions);
    if n > u32::MAX as usize {
        return Err(Error::param("n_assets", "too many assets for u32 row indices"));
    }
    let mut rng = stream_rng(seed, 0);
    let expected = (prob * (n as f64) * (m as f64)) as usize;
    let mut col_ptr = Vec::with_capacity(m + 1);
    let mut row_idx: Vec<u32> = Vec::with_capacity(expected + expected / 8 + 16);
    let mut values: Vec<f64> = Vec::with_capacity(expected + expected / 8 + 16);
    col_ptr.push(0);
    if prob > 0.0 {
        let gaps = if prob < 1.0 {
            Some(Geometric::new(prob).map_err(|e| Error::param("q", e.to_string()))?)
        } else {
            None
        };
        for _ in 0..m {
            let mut i: u64 = 0;
            loop {
                if let Some(g) = &gaps {
                    i += g.sample(&mut rng);
                }
                if i >= n as u64 {
                    break;
                }
                row_idx.push(i as u32);
                values.push(weights.sample(&mut rng));
                i += 1;
            }
            col_ptr.push(values.len());
        }
    } else {
        col_ptr.resize(m + 1, 0);
    }
    Ok(HoldingsMatrix {
        matrix: CscMatrix::from_raw(n, m, col_ptr, row_idx, values),
        seed,
    })
}

/// Normalizes every non-empty column of `X` to sum to one. Empty columns stay
/// zero and are listed in `empty_columns`.
pub fn to_weights(x: &HoldingsMatrix) -> PortfolioWeights {
    let mut empty_columns = Vec::new();
    let matrix = x.matrix.map_columns(|j, src, dst| {
        let total: f64 = src.iter().sum();
        if src.is_empty() || total == 0.0 {
            empty_columns.push(j);
            dst.iter_mut().for_each(|d| *d = 0.0);
        } else {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s / total;
            }
        }
    });
    PortfolioWeights { matrix, empty_columns }
}

/// Empirical moments of an ensemble of holdings matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub samples: usize,
    /// Fraction of the `N·M` slots that hold an investment.
    pub fill_fraction: Estimate,
    /// Entry-wise mean `E[X_ij]`.
    pub mean_x: Estimate,
    /// Entry-wise mean `E[W_ij]`.
    pub mean_w: Estimate,
    /// Mean squared investment size over non-zero entries, `E[K²]`.
    pub mean_k2: Estimate,
    /// Fraction of institutions that invest in nothing.
    pub empty_column_fraction: Estimate,
    /// Mean number of assets per institution.
    pub mean_col_degree: Estimate,
    /// Mean number of institutions per asset.
    pub mean_row_degree: Estimate,
    /// `col_degree_hist[k]` institutions hold exactly `k` assets (summed over samples).
    pub col_degree_hist: Vec<u64>,
    /// `row_degree_hist[k]` assets have exactly `k` investors (summed over samples).
    pub row_degree_hist: Vec<u64>,
}

#[derive(Debug, Default)]
struct EnsembleAccumulator {
    fill: Welford,
    mean_x: Welford,
    mean_w: Welford,
    mean_k2: Welford,
    empty: Welford,
    col_deg: Welford,
    row_deg: Welford,
    col_hist: Vec<u64>,
    row_hist: Vec<u64>,
}

fn bump(hist: &mut Vec<u64>, k: usize) {
    if hist.len() <= k {
        hist.resize(k + 1, 0);
    }
    hist[k] += 1;
}

impl EnsembleAccumulator {
    fn push(&mut self, x: &HoldingsMatrix) {
        let (n, m) = (x.n_assets() as f64, x.n_institutions() as f64);
        let slots = n * m;
        let w = to_weights(x);
        let nnz = x.nnz() as f64;
        self.fill.push(nnz / slots);
        self.mean_x.push(x.matrix.values().iter().sum::<f64>() / slots);
        self.mean_w.push(w.matrix.values().iter().sum::<f64>() / slots);
        if x.nnz() > 0 {
            self.mean_k2
                .push(x.matrix.values().iter().map(|v| v * v).sum::<f64>() / nnz);
        }
        self.empty.push(w.empty_columns.len() as f64 / m);
        self.col_deg.push(nnz / m);
        self.row_deg.push(nnz / n);
        for d in x.matrix.col_degrees() {
            bump(&mut self.col_hist, d);
        }
        for d in x.matrix.row_degrees() {
            bump(&mut self.row_hist, d);
        }
    }
}

/// Accumulates [`EnsembleStats`] over `samples` (at least one).
pub fn ensemble_stats<I, B>(samples: I) -> Result<EnsembleStats>
where
    I: IntoIterator<Item = B>,
    B: Borrow<HoldingsMatrix>,
{
    let mut acc = EnsembleAccumulator::default();
    for x in samples {
        acc.push(x.borrow());
    }
    let count = acc.fill.count();
    if count == 0 {
        return Err(Error::param("samples", "need at least one holdings matrix"));
    }
    Ok(EnsembleStats {
        samples: count,
        fill_fraction: acc.fill.estimate(),
        mean_x: acc.mean_x.estimate(),
        mean_w: acc.mean_w.estimate(),
        mean_k2: acc.mean_k2.estimate(),
        empty_column_fraction: acc.empty.estimate(),
        mean_col_degree: acc.col_deg.estimate(),
        mean_row_degree: acc.row_deg.estimate(),
        col_degree_hist: acc.col_hist,
        row_degree_hist: acc.row_hist,
    })
}

/// Exact finite-size mean weight `E[W_ij] = (1 − (1 − q/√(NM))^N)/N`.
pub fn exact_mean_weight(p: &ModelParams) -> Result<f64> {
    let prob = p.link_probability()?;
    let n = p.n_assets as f64;
    Ok((1.0 - (1.0 - prob).powf(n)) / n)
}

/// Writes a sparse matrix as `i j value` rows under a `#` header carrying the
/// kind, dimensions, seed and entry count. Values use the shortest decimal that
/// round-trips.
pub fn write_triplets<W: Write>(out: &mut W, kind: &str, matrix: &CscMatrix, seed: u64) -> Result<()> {
    writeln!(out, "# kind {kind}")?;
    writeln!(out, "# dims {} {}", matrix.n_rows(), matrix.n_cols())?;
    writeln!(out, "# seed {seed}")?;
    writeln!(out, "# nnz {}", matrix.nnz())?;
    for (i, j, v) in matrix.triplets() {
        writeln!(out, "{i} {j} {v}")?;
    }
    Ok(())
}

/// A matrix read back from [`write_triplets`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletFile {
    pub kind: String,
    pub seed: u64,
    pub matrix: CscMatrix,
}

pub fn read_triplets<R: BufRead>(input: R) -> Result<TripletFile> {
    let mut kind = None;
    let mut dims = None;
    let mut seed = None;
    let mut nnz = None;
    let mut entries = Vec::new();
    let bad = |line: usize, reason: &str| Error::Triplet {
        line,
        reason: reason.to_string(),
    };
    for (k, line) in input.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let mut parts = header.split_whitespace();
            match parts.next() {
                Some("kind") => kind = parts.next().map(str::to_string),
                Some("dims") => {
                    let r = parts.next().and_then(|s| s.parse::<usize>().ok());
                    let c = parts.next().and_then(|s| s.parse::<usize>().ok());
                    dims = Some((r.ok_or_else(|| bad(lineno, "bad dims"))?, c.ok_or_else(|| bad(lineno, "bad dims"))?));
                }
                Some("seed") => {
                    seed = Some(parts.next().and_then(|s| s.parse::<u64>().ok()).ok_or_else(|| bad(lineno, "bad seed"))?)
                }
                Some("nnz") => {
                    nnz = Some(parts.next().and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| bad(lineno, "bad nnz"))?)
                }
                _ => {}
            }
            continue;
        }
        let (n_rows, n_cols) = dims.ok_or_else(|| bad(lineno, "entry before dims header"))?;
        let mut parts = line.split_whitespace();
        let i = parts.next().and_then(|s| s.parse::<usize>().ok());
        let j = parts.next().and_then(|s| s.parse::<usize>().ok());
        let v = parts.next().and_then(|s| s.parse::<f64>().ok());
        match (i, j, v, parts.next()) {
            (Some(i), Some(j), Some(v), None) if i < n_rows && j < n_cols => entries.push((i, j, v)),
            _ => return Err(bad(lineno, "expected `i j value` within dims")),
        }
    }
    let (n_rows, n_cols) = dims.ok_or_else(|| bad(0, "missing dims header"))?;
    if let Some(n) = nnz {
        if n != entries.len() {
            return Err(bad(0, &format!("header says {n} entries, found {}", entries.len())));
        }
    }
    Ok(TripletFile {
        kind: kind.unwrap_or_default(),
        seed: seed.unwrap_or(0),
        matrix: CscMatrix::from_triplets(n_rows, n_cols, &entries),
    })
}
