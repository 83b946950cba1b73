use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dpdag_core::causal::causal_effect;
use dpdag_core::graph::Dag;
use dpdag_core::simgen::{generate, DagMode, GroundTruth, Scenario};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::io;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMode {
    Equal,
    Different,
}

impl From<ScenarioMode> for DagMode {
    fn from(m: ScenarioMode) -> Self {
        match m {
            ScenarioMode::Equal => DagMode::EqualDags,
            ScenarioMode::Different => DagMode::DifferentDags,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, clap::Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 10)]
    pub q: usize,
    #[arg(long, default_value_t = 100)]
    pub nk: usize,
    /// Number of clusters.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Intercepts are drawn uniformly on [-b, b].
    #[arg(long, default_value_t = 5.0)]
    pub b: f64,
    #[arg(long, value_enum, default_value_t = ScenarioMode::Different)]
    pub mode: ScenarioMode,
    #[arg(long, default_value_t = 0.1)]
    pub edge_prob: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

impl SimulateArgs {
    pub fn scenario(&self) -> Scenario {
        Scenario { q: self.q, n_k: self.nk, k: self.k, b: self.b, edge_prob: self.edge_prob, mode: self.mode.into() }
    }
}

pub fn write_truth(dir: &Path, truth: &GroundTruth) -> Result<()> {
    io::write(&dir.join("data.csv"), &io::matrix_to_csv(&truth.x, Some(&io::node_header(truth.x.ncols()))))?;
    io::write(&dir.join("labels.csv"), &io::labels_to_csv(&truth.labels))?;
    for (k, c) in truth.clusters.iter().enumerate() {
        let t = dir.join("truth");
        io::write(&t.join(format!("dag_{}.txt", k + 1)), &c.dag().to_text())?;
        io::write(&t.join(format!("omega_{}.csv", k + 1)), &io::matrix_to_csv(c.omega(), None))?;
        io::write(&t.join(format!("mu_{}.csv", k + 1)), &io::vector_to_csv(c.mu()))?;
    }
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let scenario = args.scenario();
    let mut rng = seeds::stream(args.seed, &[seeds::SIMULATION]);
    let truth = generate(&scenario, &mut rng)?;
    write_truth(&args.out, &truth)?;
    let mut config = serde_json::to_string_pretty(args)?;
    config.push('\n');
    io::write(&args.out.join("scenario.json"), &config)?;
    io::write_manifest(&args.out, "simulate", args.seed, &config, serde_json::Value::Null)?;
    println!(
        "simulated n = {} subjects, q = {}, K = {} into {} (seed {})",
        truth.x.nrows(),
        args.q,
        args.k,
        args.out.display(),
        args.seed
    );
    Ok(())
}

/// Ground truth as read back from a simulation directory.
#[derive(Debug, Clone)]
pub struct Truth {
    pub labels: Vec<usize>,
    pub dags: Vec<Dag>,
    pub omegas: Vec<DMatrix<f64>>,
}

impl Truth {
    pub fn from_ground_truth(g: &GroundTruth) -> Self {
        Self {
            labels: g.labels.clone(),
            dags: g.clusters.iter().map(|c| c.dag().clone()).collect(),
            omegas: g.clusters.iter().map(|c| c.omega().clone()).collect(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let labels = io::read_labels(&dir.join("labels.csv"))?;
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut dags = Vec::with_capacity(k);
        let mut omegas = Vec::with_capacity(k);
        for c in 1..=k {
            dags.push(io::read_dag(&dir.join("truth").join(format!("dag_{c}.txt")))?);
            omegas.push(io::read_matrix(&dir.join("truth").join(format!("omega_{c}.csv")))?);
        }
        if dags.windows(2).any(|w| w[0].q() != w[1].q()) {
            bail!("truth DAGs in {} differ in size", dir.display());
        }
        Ok(Self { labels, dags, omegas })
    }

    pub fn subject_dag(&self, i: usize) -> &Dag {
        &self.dags[self.labels[i]]
    }

    /// `n x q` true effects on `response`, NaN in the response column.
    pub fn causal_effects(&self, response: usize) -> Result<DMatrix<f64>> {
        let q = self.dags[0].q();
        let mut per_cluster = Vec::new();
        for (dag, omega) in self.dags.iter().zip(&self.omegas) {
            let sigma = omega.clone().try_inverse().context("true precision is singular")?;
            let mut row = vec![f64::NAN; q];
            for (s, slot) in row.iter_mut().enumerate() {
                if s != response {
                    *slot = causal_effect(&sigma, dag, s, response)?;
                }
            }
            per_cluster.push(row);
        }
        Ok(DMatrix::from_fn(self.labels.len(), q, |i, s| per_cluster[self.labels[i]][s]))
    }
}
