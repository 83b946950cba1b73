//! Command-line definitions.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::bench::BenchArgs;
use crate::config::{FitMode, InitMode, RunConfig};
use crate::simulate::SimulateArgs;
use crate::summarize::SummarizeArgs;

#[derive(Debug, Parser)]
#[command(name = "dpdag", version, about = "Dirichlet process mixtures of Gaussian DAG models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset with known clusters and DAGs.
    Simulate(SimulateArgs),
    /// Run the MCMC sampler on a data file.
    Fit(FitArgs),
    /// Posterior summaries (and scores against a truth directory) of a fit.
    Summarize(SummarizeArgs),
    /// Replicated simulation study comparing the three fitting modes.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, clap::Args)]
pub struct FitArgs {
    /// n x q numeric CSV, header optional.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON run configuration; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<FitMode>,
    /// Label file for `k-group-oracle`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub light_trace: bool,
    #[arg(long)]
    pub response: Option<usize>,
    #[command(flatten)]
    pub run: RunOverrides,
}

/// Flags shared by `fit` and `bench`.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct RunOverrides {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub a_mu: Option<f64>,
    #[arg(long)]
    pub a_omega: Option<f64>,
    #[arg(long)]
    pub u_scale: Option<f64>,
    #[arg(long)]
    pub a_pi: Option<f64>,
    #[arg(long)]
    pub b_pi: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub d: Option<f64>,
    /// Use a unit proposal ratio in the DAG move.
    #[arg(long)]
    pub unit_proposal_ratio: bool,
    #[arg(long)]
    pub dag_moves_per_sweep: Option<usize>,
    #[arg(long)]
    pub prior_dag_steps: Option<usize>,
    #[arg(long)]
    pub stick_cap: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitMode>,
}

impl RunOverrides {
    pub fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(iterations, burn_in, thin, seed, a_mu, u_scale, a_pi, c, d, dag_moves_per_sweep, init);
        if self.a_omega.is_some() {
            c.a_omega = self.a_omega;
        }
        if self.b_pi.is_some() {
            c.b_pi = self.b_pi;
        }
        if self.prior_dag_steps.is_some() {
            c.prior_dag_steps = self.prior_dag_steps;
        }
        if self.stick_cap.is_some() {
            c.stick_cap = self.stick_cap;
        }
        if self.unit_proposal_ratio {
            c.exact_proposal_ratio = false;
        }
    }
}

impl FitArgs {
    pub fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.run.apply(&mut c);
        if let Some(m) = self.mode {
            c.mode = m;
        }
        if self.labels.is_some() {
            c.labels = self.labels.clone();
        }
        if self.light_trace {
            c.light_trace = true;
        }
        if let Some(r) = self.response {
            c.response = r;
        }
        Ok(c)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => crate::simulate::cmd_simulate(&a),
        Command::Fit(a) => crate::fit::cmd_fit(&a.data, &a.config()?, &a.out),
        Command::Summarize(a) => crate::summarize::cmd_summarize(&a),
        Command::Bench(a) => crate::bench::cmd_bench(&a),
    }
}
