//! Run configuration: one JSON document, overridable flag by flag.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dpdag_core::dp::{AlphaPrior, InitialPartition, ModelSpec, Schedule};
use dpdag_core::graph::{DagPrior, ProposalRatio};
use dpdag_core::wishart::Hyperparams;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Dp,
    OneGroupNaive,
    KGroupOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Chinese-restaurant draw of the starting partition.
    Prior,
    /// Everyone starts in one component.
    Single,
}

/// Every tunable of a fit. Optional hyperparameters default to values that
/// depend on `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub a_mu: f64,
    /// Defaults to `q`.
    pub a_omega: Option<f64>,
    /// Full `U`; when absent `U = u_scale * I`.
    pub u: Option<Vec<Vec<f64>>>,
    pub u_scale: f64,
    /// Defaults to zero.
    pub m: Option<Vec<f64>>,
    pub a_pi: f64,
    /// Defaults to `(2q - 2) / 3`.
    pub b_pi: Option<f64>,
    pub c: f64,
    pub d: f64,
    pub exact_proposal_ratio: bool,
    pub light_trace: bool,
    pub dag_moves_per_sweep: usize,
    /// Defaults to `2 q^2`.
    pub prior_dag_steps: Option<usize>,
    pub stick_cap: Option<usize>,
    pub init: InitMode,
    pub mode: FitMode,
    /// Label file for the oracle mode.
    pub labels: Option<PathBuf>,
    /// 1-indexed response node for causal summaries.
    pub response: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 25_000,
            burn_in: 5_000,
            thin: 1,
            seed: 1,
            a_mu: 1.0,
            a_omega: None,
            u: None,
            u_scale: 1.0,
            m: None,
            a_pi: 1.0,
            b_pi: None,
            c: 3.0,
            d: 1.0,
            exact_proposal_ratio: true,
            light_trace: false,
            dag_moves_per_sweep: 1,
            prior_dag_steps: None,
            stick_cap: None,
            init: InitMode::Prior,
            mode: FitMode::Dp,
            labels: None,
            response: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn schedule(&self) -> Result<Schedule> {
        let s = Schedule { iterations: self.iterations, burn_in: self.burn_in, thin: self.thin };
        if s.iterations <= s.burn_in {
            bail!("iterations ({}) must exceed burn-in ({})", s.iterations, s.burn_in);
        }
        s.validate()?;
        Ok(s)
    }

    pub fn hyperparams(&self, q: usize) -> Result<Hyperparams> {
        let u = match &self.u {
            Some(rows) => {
                if rows.len() != q || rows.iter().any(|r| r.len() != q) {
                    bail!("u must be a {q}x{q} matrix");
                }
                DMatrix::from_fn(q, q, |i, j| rows[i][j])
            }
            None => DMatrix::identity(q, q) * self.u_scale,
        };
        let m = match &self.m {
            Some(v) if v.len() == q => DVector::from_column_slice(v),
            Some(v) => bail!("m has length {} but the data have q = {q}", v.len()),
            None => DVector::zeros(q),
        };
        Ok(Hyperparams::new(self.a_mu, m, self.a_omega.unwrap_or(q as f64), u)?)
    }

    pub fn model(&self, q: usize) -> Result<ModelSpec> {
        if self.response == 0 || self.response > q {
            bail!("response must be a node in 1..={q}, got {}", self.response);
        }
        if self.dag_moves_per_sweep == 0 {
            bail!("dag_moves_per_sweep must be at least 1");
        }
        let b_pi = self.b_pi.unwrap_or_else(|| DagPrior::sparse(q).b);
        Ok(ModelSpec {
            hyper: self.hyperparams(q)?,
            dag_prior: DagPrior::new(self.a_pi, b_pi)?,
            alpha_prior: AlphaPrior { c: self.c, d: self.d },
            proposal: if self.exact_proposal_ratio { ProposalRatio::Exact } else { ProposalRatio::Unit },
            dag_moves_per_sweep: self.dag_moves_per_sweep,
            prior_dag_steps: self.prior_dag_steps.unwrap_or(2 * q * q),
            stick_cap: self.stick_cap,
            fix_alpha0: false,
            flat_likelihood: false,
            init: match self.init {
                InitMode::Prior => InitialPartition::PriorDraw,
                InitMode::Single => InitialPartition::SingleCluster,
            },
        })
    }
}
