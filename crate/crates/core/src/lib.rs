//! Stability of random bank–asset investment networks with heterogeneous
//! investment sizes.
//!
//! Institutions invest in assets independently with probability `q/√(NM)`,
//! underwriting either a heavy (`B`) or a light (`s`) amount. Rebalancing to a
//! fixed leverage target makes the endogenous part of asset returns evolve as
//! `e_t = Φ(e_{t-1} + ε_t)` with `Φ = ((η−1)/γ)·α²·W·Wᵀ`, so the market is
//! unstable once the average largest eigenvalue of `Φ` exceeds one.
//!
//! Three estimators of that eigenvalue are provided:
//!
//! * [`spectral`]: sampling and matrix-free diagonalization of `Φ`,
//! * [`corsi`]: the closed-form top eigenvalue of the expected matrix `E[Φ]`,
//! * [`replica`]: population dynamics for `κ·X·Xᵀ` in the sparse limit.
//!
//! [`sweep`] builds phase diagrams and `q`-sweeps on top of them, and
//! [`dynamics`] checks the linear return process against an agent-based
//! balance-sheet simulation.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corsi;
pub mod dynamics;
pub mod error;
pub mod network;
pub mod params;
pub mod pool;
pub mod replica;
pub mod rng;
pub mod sparse;
pub mod spectral;
pub mod stats;
pub mod sweep;

pub use error::{Error, Result};
pub use network::{HoldingsMatrix, PortfolioWeights};
pub use params::{HeterogeneityParams, ModelParams};
pub use spectral::{EigEstimate, Method, PhiOperator};
