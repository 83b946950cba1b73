//! Replicated simulation study: simulate, fit with each method, score.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use dpdag_core::dp::{run_chain_with, Allocation};
use dpdag_core::format_real;
use dpdag_core::simgen::{generate, Scenario};
use dpdag_core::summaries::{estimate_partition, PosteriorAccumulator};
use serde::{Deserialize, Serialize};

use crate::config::{FitMode, RunConfig};
use crate::io;
use crate::seeds;
use crate::simulate::{ScenarioMode, Truth};
use crate::summarize::{dag_estimates, score, Summaries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub q: usize,
    pub k: usize,
    pub nk: Vec<usize>,
    pub b: Vec<f64>,
    pub edge_prob: f64,
    pub scenario: ScenarioMode,
    pub replicates: usize,
    pub methods: Vec<FitMode>,
    pub threshold: f64,
    pub edge_threshold: f64,
    /// Priors, schedule and master seed shared by every method.
    pub run: RunConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            q: 10,
            k: 2,
            nk: vec![50, 100],
            b: vec![5.0],
            edge_prob: 0.1,
            scenario: ScenarioMode::Different,
            replicates: 10,
            methods: vec![FitMode::Dp, FitMode::OneGroupNaive, FitMode::KGroupOracle],
            threshold: 0.5,
            edge_threshold: 0.5,
            // one DAG move per sweep leaves the fixed-partition chains under-mixed at S = 10000
            run: RunConfig { iterations: 10_000, burn_in: 2_000, dag_moves_per_sweep: 5, ..RunConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub nk: usize,
    pub b: f64,
    pub replicate: usize,
    pub method: FitMode,
    pub binder: f64,
    pub vi: f64,
    pub mean_shd: f64,
    pub cyclic: usize,
    pub causal_x100: f64,
}

fn method_index(m: FitMode) -> u64 {
    match m {
        FitMode::Dp => 0,
        FitMode::OneGroupNaive => 1,
        FitMode::KGroupOracle => 2,
    }
}

pub fn method_name(m: FitMode) -> &'static str {
    match m {
        FitMode::Dp => "dp",
        FitMode::OneGroupNaive => "one_group_naive",
        FitMode::KGroupOracle => "k_group_oracle",
    }
}

/// Runs the whole grid; `progress` sees one line per finished fit.
pub fn run_bench(cfg: &BenchConfig, mut progress: impl FnMut(&BenchRecord)) -> Result<Vec<BenchRecord>> {
    let schedule = cfg.run.schedule()?;
    let model = cfg.run.model(cfg.q)?;
    let response = cfg.run.response - 1;
    let mut out = Vec::new();
    for &nk in &cfg.nk {
        for &b in &cfg.b {
            let scenario = Scenario { q: cfg.q, n_k: nk, k: cfg.k, b, edge_prob: cfg.edge_prob, mode: cfg.scenario.into() };
            for rep in 0..cfg.replicates {
                let cell = [nk as u64, b.to_bits(), rep as u64];
                let mut rng = seeds::stream(cfg.run.seed, &[seeds::SIMULATION, cell[0], cell[1], cell[2]]);
                let g = generate(&scenario, &mut rng)?;
                let truth = Truth::from_ground_truth(&g);
                let n = g.x.nrows();
                for &method in &cfg.methods {
                    let allocation = match method {
                        FitMode::Dp => Allocation::Dirichlet,
                        FitMode::OneGroupNaive => Allocation::Fixed(vec![0; n]),
                        FitMode::KGroupOracle => Allocation::Fixed(g.labels.clone()),
                    };
                    let mut acc = PosteriorAccumulator::new(n, cfg.q, response)?;
                    let mut failure = None;
                    let mut rng =
                        seeds::stream(cfg.run.seed, &[seeds::CHAIN, cell[0], cell[1], cell[2], method_index(method)]);
                    run_chain_with(&g.x, &model, &allocation, &schedule, &mut rng, |d| {
                        if failure.is_none() {
                            failure = acc.add(&d).err();
                        }
                    })
                    .with_context(|| format!("n_k = {nk}, b = {b}, replicate {}, {}", rep + 1, method_name(method)))?;
                    if let Some(e) = failure {
                        return Err(e.into());
                    }
                    let s = Summaries::from_accumulator(&acc, n)?;
                    let partition = estimate_partition(&s.similarity, cfg.threshold)?;
                    let dags = dag_estimates(&s, cfg.edge_threshold, false)?;
                    let sc = score(&s, &partition, &dags, &truth)?;
                    let rec = BenchRecord {
                        nk,
                        b,
                        replicate: rep + 1,
                        method,
                        binder: sc.binder,
                        vi: sc.vi,
                        mean_shd: sc.mean_shd(),
                        cyclic: sc.cyclic,
                        causal_x100: 100.0 * sc.causal_distance,
                    };
                    progress(&rec);
                    out.push(rec);
                }
            }
        }
    }
    Ok(out)
}

pub fn mean_of(records: &[BenchRecord], method: FitMode, nk: usize, b: f64, f: impl Fn(&BenchRecord) -> f64) -> f64 {
    let v: Vec<f64> = records.iter().filter(|r| r.method == method && r.nk == nk && r.b == b).map(f).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn results_csv(records: &[BenchRecord]) -> String {
    let mut s = String::from("n_k,b,replicate,method,binder_loss,variation_of_information,mean_shd,cyclic_estimates,causal_distance_x100\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.nk,
            format_real(r.b),
            r.replicate,
            method_name(r.method),
            format_real(r.binder),
            format_real(r.vi),
            format_real(r.mean_shd),
            r.cyclic,
            format_real(r.causal_x100)
        );
    }
    s
}

/// Rows `b`, columns `n_k`, one block per method: replicate means.
pub fn table_csv(cfg: &BenchConfig, records: &[BenchRecord], f: impl Fn(&BenchRecord) -> f64 + Copy) -> String {
    let mut s = String::from("method,b");
    for nk in &cfg.nk {
        let _ = write!(s, ",n_k={nk}");
    }
    s.push('\n');
    for &m in &cfg.methods {
        for &b in &cfg.b {
            let _ = write!(s, "{},{}", method_name(m), format_real(b));
            for &nk in &cfg.nk {
                let _ = write!(s, ",{}", format_real(mean_of(records, m, nk, b, f)));
            }
            s.push('\n');
        }
    }
    s
}

fn report(cfg: &BenchConfig, records: &[BenchRecord]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "q = {}, K = {}, {} replicates, S = {}, burn-in = {}, seed = {}",
        cfg.q, cfg.k, cfg.replicates, cfg.run.iterations, cfg.run.burn_in, cfg.run.seed
    );
    type Column = fn(&BenchRecord) -> f64;
    let blocks: [(&str, Column); 4] = [
        ("Average absolute-value causal distance (x100)", |r| r.causal_x100),
        ("Mean structural Hamming distance", |r| r.mean_shd),
        ("Variation of information", |r| r.vi),
        ("Binder loss", |r| r.binder),
    ];
    for (title, f) in blocks {
        let _ = writeln!(s, "\n{title}");
        let _ = write!(s, "{:<18}{:>6}", "method", "b");
        for nk in &cfg.nk {
            let _ = write!(s, "{:>12}", format!("n_k={nk}"));
        }
        s.push('\n');
        for &m in &cfg.methods {
            for &b in &cfg.b {
                let _ = write!(s, "{:<18}{:>6}", method_name(m), b);
                for &nk in &cfg.nk {
                    let _ = write!(s, "{:>12.3}", mean_of(records, m, nk, b, f));
                }
                s.push('\n');
            }
        }
    }
    s
}

#[derive(Debug, Clone, clap::Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON benchmark configuration; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub nk: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub b: Option<Vec<f64>>,
    #[arg(long)]
    pub edge_prob: Option<f64>,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioMode>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<FitMode>>,
    #[command(flatten)]
    pub run: crate::cli::RunOverrides,
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => BenchConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = &args.$f { cfg.$f = v.clone(); })* };
    }
    set!(q, k, nk, b, edge_prob, scenario, replicates, methods);
    args.run.apply(&mut cfg.run);

    let mut config_json = serde_json::to_string_pretty(&cfg)?;
    config_json.push('\n');
    io::write(&args.out.join("config.json"), &config_json)?;
    let records = run_bench(&cfg, |r| {
        eprintln!(
            "n_k={} b={} rep={} {}: VI={:.4} BL={:.4} SHD={:.3} causal={:.3}",
            r.nk,
            r.b,
            r.replicate,
            method_name(r.method),
            r.vi,
            r.binder,
            r.mean_shd,
            r.causal_x100
        )
    })?;
    io::write(&args.out.join("results.csv"), &results_csv(&records))?;
    io::write(&args.out.join("table_causal.csv"), &table_csv(&cfg, &records, |r| r.causal_x100))?;
    io::write(&args.out.join("table_shd.csv"), &table_csv(&cfg, &records, |r| r.mean_shd))?;
    io::write(&args.out.join("table_vi.csv"), &table_csv(&cfg, &records, |r| r.vi))?;
    io::write(&args.out.join("table_binder.csv"), &table_csv(&cfg, &records, |r| r.binder))?;
    let text = report(&cfg, &records);
    io::write(&args.out.join("report.txt"), &text)?;
    io::write_manifest(&args.out, "bench", cfg.run.seed, &config_json, serde_json::Value::Null)?;
    print!("{text}");
    Ok(())
}
