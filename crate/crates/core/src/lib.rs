//! Chebyshev-series angular margin loss (ChebyAAM) and friends.
//!
//! The arccos-based additive angular margin transform `cos(arccos(x) + m)`
//! has a derivative that blows up as the target cosine `x` approaches 1.
//! This crate replaces it with a truncated Chebyshev series whose
//! derivatives are polynomials, and provides the surrounding machinery:
//! baseline margin losses with analytic gradients, finite-difference
//! oracles, a small cosine-classifier training harness, curve and surface
//! exports, and EER/minDCF verification scoring.

pub mod cheby;
pub mod cli;
pub mod error;
pub mod grid;
pub mod io;
pub mod landscape;
pub mod losses;
pub mod metrics;
pub mod numcheck;
pub mod toytrain;

pub use cheby::{ChebyshevSeries, EvalPoint};
pub use error::{Error, Result};
