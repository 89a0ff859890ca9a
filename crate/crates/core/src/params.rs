//! Model inputs, the two-point heterogeneity solver and derived scalars.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the normalization constraints `p_B + p_s = 1` and
/// `p_B·B + p_s·s = 1`.
pub const CONSTRAINT_TOL: f64 = 1e-12;

/// Scalar inputs of the market model.
///
/// `n_assets` is `N` (rows of the holdings matrix) and `n_institutions` is `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_assets: usize,
    pub n_institutions: usize,
    /// Diversification parameter; each link exists with probability `q/√(NM)`.
    pub q: f64,
    /// Risk-appetite proxy in the VaR constraint.
    pub zeta: f64,
    /// Systematic variance σ_s².
    pub sigma_s2: f64,
    /// Diversifiable variance σ_d².
    pub sigma_d2: f64,
    /// Asset liquidity.
    pub gamma: f64,
    /// Factor variance σ_f².
    pub sigma_f2: f64,
    /// Idiosyncratic variance σ_ν².
    pub sigma_nu2: f64,
}

impl Default for ModelParams {
    /// Parameters of the low-α reference setup (`N = 200`, `M = 300`, `q = 8`).
    fn default() -> Self {
        Self {
            n_assets: 200,
            n_institutions: 300,
            q: 8.0,
            zeta: 1.85,
            sigma_s2: 0.009,
            sigma_d2: 0.03,
            gamma: 50.0,
            sigma_f2: 0.0001,
            sigma_nu2: 0.0001,
        }
    }
}

impl ModelParams {
    pub fn with_dims(mut self, n_assets: usize, n_institutions: usize) -> Self {
        self.n_assets = n_assets;
        self.n_institutions = n_institutions;
        self
    }

    pub fn with_q(mut self, q: f64) -> Self {
        self.q = q;
        self
    }

    /// Structure parameter `α = √(N/M)`.
    pub fn alpha(&self) -> f64 {
        (self.n_assets as f64 / self.n_institutions as f64).sqrt()
    }

    /// `√(NM)`.
    pub fn sqrt_nm(&self) -> f64 {
        ((self.n_assets as f64) * (self.n_institutions as f64)).sqrt()
    }

    /// Bernoulli probability `q/√(NM)` that a given institution holds a given
    /// asset. Only checks that it is a probability.
    pub fn link_probability(&self) -> Result<f64> {
        if self.n_assets == 0 || self.n_institutions == 0 {
            return Err(Error::param("n_assets/n_institutions", "must be at least 1"));
        }
        if !(self.q >= 0.0) || !self.q.is_finite() {
            return Err(Error::param("q", format!("must be finite and ≥ 0, got {}", self.q)));
        }
        let p = self.q / self.sqrt_nm();
        if p > 1.0 {
            return Err(Error::param(
                "q",
                format!("q/√(NM) = {p} exceeds 1 (q must not exceed √(NM) = {})", self.sqrt_nm()),
            ));
        }
        Ok(p)
    }

    /// True when `q ≤ 0.1·√(NM)`, the regime where links are sparse.
    pub fn is_sparse(&self) -> bool {
        self.q <= 0.1 * self.sqrt_nm()
    }

    /// Checks every invariant, including `η > 1`. Logs a warning outside the
    /// sparse regime.
    pub fn validate(&self) -> Result<()> {
        self.link_probability()?;
        if !(self.q > 0.0) {
            return Err(Error::param("q", "must be > 0"));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::param("gamma", format!("must be > 0, got {}", self.gamma)));
        }
        if !(self.zeta > 0.0) || !self.zeta.is_finite() {
            return Err(Error::param("zeta", format!("must be > 0, got {}", self.zeta)));
        }
        for (name, v) in [
            ("sigma_s2", self.sigma_s2),
            ("sigma_d2", self.sigma_d2),
            ("sigma_f2", self.sigma_f2),
            ("sigma_nu2", self.sigma_nu2),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(name, format!("variance must be ≥ 0, got {v}")));
            }
        }
        if !self.is_sparse() {
            log::warn!(
                "q = {} is above 0.1·√(NM) = {:.3}; the sparse-regime approximations may not apply",
                self.q,
                0.1 * self.sqrt_nm()
            );
        }
        let eta = target_leverage(self)?;
        if eta <= 1.0 {
            return Err(Error::LeverageTooLow { eta });
        }
        Ok(())
    }

    /// `g = (η−1)/γ`.
    pub fn impact_gain(&self) -> Result<f64> {
        Ok((target_leverage(self)? - 1.0) / self.gamma)
    }

    /// Prefactor `κ₀ = ((η−1)/γ)·α²` of `Φ = κ₀·W·Wᵀ`.
    pub fn phi_prefactor(&self) -> Result<f64> {
        let a = self.alpha();
        Ok(self.impact_gain()? * a * a)
    }
}

/// Two-point investment-size distribution: `B` with probability `p_B`,
/// `s` with probability `p_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityParams {
    pub big: f64,
    pub small: f64,
    pub p_big: f64,
    pub p_small: f64,
}

impl HeterogeneityParams {
    /// Every investment has size one.
    pub fn homogeneous() -> Self {
        Self {
            big: 1.0,
            small: 1.0,
            p_big: 0.5,
            p_small: 0.5,
        }
    }

    /// Builds and validates `(B, s, p_B, 1 − p_B)`.
    pub fn new(big: f64, small: f64, p_big: f64) -> Result<Self> {
        let h = Self {
            big,
            small,
            p_big,
            p_small: 1.0 - p_big,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_big) {
            return Err(Error::Heterogeneity(format!("p_B = {} outside [0, 1]", self.p_big)));
        }
        if (self.p_big + self.p_small - 1.0).abs() > CONSTRAINT_TOL {
            return Err(Error::Heterogeneity(format!(
                "p_B + p_s = {} ≠ 1",
                self.p_big + self.p_small
            )));
        }
        let mean = self.mean();
        if (mean - 1.0).abs() > CONSTRAINT_TOL {
            return Err(Error::Heterogeneity(format!("p_B·B + p_s·s = {mean} ≠ 1")));
        }
        if !(self.small > 0.0 && self.small <= 1.0 + CONSTRAINT_TOL && self.big >= 1.0 - CONSTRAINT_TOL)
        {
            return Err(Error::Heterogeneity(format!(
                "need B ≥ 1 ≥ s > 0, got B = {}, s = {}",
                self.big, self.small
            )));
        }
        Ok(())
    }

    /// `p_B·B + p_s·s`.
    pub fn mean(&self) -> f64 {
        self.p_big * self.big + self.p_small * self.small
    }

    /// Heterogeneity level `φ = 1 − s/B`.
    pub fn phi(&self) -> f64 {
        1.0 - self.small / self.big
    }

    /// Second moment `b = p_B·B² + p_s·s²`.
    pub fn second_moment(&self) -> f64 {
        second_moment_b(self)
    }
}

/// Solves the normalization constraints for a heterogeneity level `φ` and a
/// heavy-investment probability `p_B`:
/// `B = 1/(1 − φ(1 − p_B))`, `s = (1 − φ)·B`.
///
/// `φ = 1` is excluded because it forces `s = 0`. With `p_B = 0` or `p_B = 1`
/// only the homogeneous point `φ = 0` is admissible.
pub fn solve_heterogeneity(phi: f64, p_big: f64) -> Result<HeterogeneityParams> {
    if !phi.is_finite() || phi < 0.0 {
        return Err(Error::Heterogeneity(format!("φ = {phi} must lie in [0, 1)")));
    }
    if phi >= 1.0 {
        return Err(Error::Heterogeneity(format!(
            "φ = {phi} ≥ 1 forces s = 0, but investments must be strictly positive"
        )));
    }
    if !(p_big > 0.0 && p_big <= 1.0) {
        if p_big == 0.0 && phi == 0.0 {
            return Ok(HeterogeneityParams {
                big: 1.0,
                small: 1.0,
                p_big: 0.0,
                p_small: 1.0,
            });
        }
        return Err(Error::Heterogeneity(format!(
            "p_B = {p_big} must lie in (0, 1] (p_B = 0 only admits φ = 0)"
        )));
    }
    if p_big == 1.0 && phi > 0.0 {
        return Err(Error::Heterogeneity(format!(
            "p_B = 1 forces B = 1 and hence φ = 0, got φ = {phi}"
        )));
    }
    let big = 1.0 / (1.0 - phi * (1.0 - p_big));
    let small = (1.0 - phi) * big;
    let h = HeterogeneityParams {
        big,
        small,
        p_big,
        p_small: 1.0 - p_big,
    };
    h.validate()?;
    Ok(h)
}

/// Target leverage from a saturated VaR constraint:
/// `η = 1/(ζ·√(σ_s² + σ_d²/(αq)))`.
pub fn target_leverage(p: &ModelParams) -> Result<f64> {
    let aq = p.alpha() * p.q;
    if !(aq > 0.0) {
        return Err(Error::param("q", "αq must be > 0"));
    }
    let var = p.sigma_s2 + p.sigma_d2 / aq;
    if !(var > 0.0) {
        return Err(Error::ZeroPortfolioVariance);
    }
    Ok(1.0 / (p.zeta * var.sqrt()))
}

/// `b = p_B·B² + p_s·s²`.
pub fn second_moment_b(h: &HeterogeneityParams) -> f64 {
    h.p_big * h.big * h.big + h.p_small * h.small * h.small
}

/// Derived scalars reported alongside every sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedScalars {
    pub alpha: f64,
    pub eta: f64,
    pub b: f64,
    /// `κ₀ = ((η−1)/γ)·α²`, the prefactor of `Φ`.
    pub kappa0: f64,
    /// `κ = ((η−1)/γ)·(1−e^{−αq})²/q²`, the prefactor of `κ·X·Xᵀ`.
    pub kappa: f64,
    /// `c = (1−e^{−αq})/(αq)`.
    pub c: f64,
}

impl DerivedScalars {
    pub fn compute(p: &ModelParams, h: &HeterogeneityParams) -> Result<Self> {
        let alpha = p.alpha();
        let eta = target_leverage(p)?;
        let g = (eta - 1.0) / p.gamma;
        let c = crate::replica::scaling_constant(alpha, p.q);
        Ok(Self {
            alpha,
            eta,
            b: second_moment_b(h),
            kappa0: g * alpha * alpha,
            kappa: g * c * c * alpha * alpha,
            c,
        })
    }
}
