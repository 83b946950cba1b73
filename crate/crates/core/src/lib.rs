//! Bayesian inference for Dirichlet-process mixtures of Gaussian DAG models.
//!
//! The crate fits a DP mixture whose components are Gaussian DAG models under
//! a Normal-DAG-Wishart prior, using a slice sampler with a partial-analytic
//! Metropolis-Hastings step for each component's DAG. Posterior output is
//! summarised as co-clustering probabilities, subject-specific edge
//! probabilities and subject-specific model-averaged causal effects.

pub mod causal;
pub mod dp;
pub mod error;
pub mod graph;
pub mod pas;
pub mod simgen;
pub mod summaries;
pub mod wishart;

pub use error::{Error, Result};

/// Decimal text with 17 significant digits, enough to round-trip any `f64`.
pub fn format_real(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.16e}")
}

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
