use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dpdag_core::dp::{run_chain_with, Allocation, Draw, SweepCounts};
use dpdag_core::format_real;
use dpdag_core::summaries::PosteriorAccumulator;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{FitMode, RunConfig};
use crate::io;
use crate::seeds;

/// Shape and schedule of a stored trace, `trace/trace.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceInfo {
    pub n: usize,
    pub q: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub retained: usize,
    /// Only accumulated summaries were kept.
    pub light: bool,
    /// 1-indexed response of the stored causal summary (light traces).
    pub response: usize,
}

pub fn allocation_for(config: &RunConfig, n: usize) -> Result<Allocation> {
    Ok(match config.mode {
        FitMode::Dp => Allocation::Dirichlet,
        FitMode::OneGroupNaive => Allocation::Fixed(vec![0; n]),
        FitMode::KGroupOracle => {
            let path = config.labels.as_ref().context("k_group_oracle mode needs a label file")?;
            let labels = io::read_labels(path)?;
            if labels.len() != n {
                bail!("{} labels for {n} data rows", labels.len());
            }
            Allocation::Fixed(labels)
        }
    })
}

struct TraceWriter {
    dir: PathBuf,
    light: bool,
    alloc: BufWriter<File>,
    alpha0: BufWriter<File>,
    k: BufWriter<File>,
}

impl TraceWriter {
    fn create(dir: &Path, n: usize, light: bool) -> Result<Self> {
        if dir.exists() {
            fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            let p = dir.join(name);
            Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
        };
        let mut alloc = open("alloc.csv")?;
        let header: Vec<String> = (1..=n).map(|i| format!("s{i}")).collect();
        writeln!(alloc, "iteration,{}", header.join(","))?;
        let mut alpha0 = open("alpha0.csv")?;
        writeln!(alpha0, "iteration,alpha0")?;
        let mut k = open("k.csv")?;
        writeln!(k, "iteration,k_active,occupied")?;
        Ok(Self { dir: dir.to_path_buf(), light, alloc, alpha0, k })
    }

    fn record(&mut self, d: &Draw) -> Result<()> {
        let t = d.iteration;
        let mut line = t.to_string();
        for &l in &d.xi {
            write!(line, ",{}", l + 1)?;
        }
        writeln!(self.alloc, "{line}")?;
        writeln!(self.alpha0, "{t},{}", format_real(d.alpha0))?;
        let mut seen = vec![false; d.k_active];
        d.xi.iter().for_each(|&k| seen[k] = true);
        writeln!(self.k, "{t},{},{}", d.k_active, seen.iter().filter(|s| **s).count())?;
        if !self.light {
            for (k, c) in d.clusters.iter().enumerate() {
                let stem = format!("{t}_{}", k + 1);
                fs::write(self.dir.join(format!("omega_{stem}.csv")), io::matrix_to_csv(&c.omega, None))?;
                fs::write(self.dir.join(format!("mu_{stem}.csv")), io::vector_to_csv(&c.mu))?;
                fs::write(self.dir.join(format!("dag_{stem}.txt")), c.dag.to_text())?;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.alloc.flush()?;
        self.alpha0.flush()?;
        self.k.flush()?;
        Ok(())
    }
}

/// Files holding the accumulated summaries of a light trace.
pub fn write_light_summaries(dir: &Path, acc: &PosteriorAccumulator, n: usize, q: usize) -> Result<()> {
    let sim = acc.similarity.finish()?;
    io::write(&dir.join("similarity.csv"), &sim.to_csv())?;
    let mut edges = String::from("subject,from,to,probability\n");
    for i in 0..n {
        let p = acc.edges.probabilities(i)?;
        for u in 0..q {
            for v in 0..q {
                if p[(u, v)] > 0.0 {
                    writeln!(edges, "{},{},{},{}", i + 1, u + 1, v + 1, format_real(p[(u, v)]))?;
                }
            }
        }
    }
    io::write(&dir.join("edge_probs.csv"), &edges)?;
    io::write(&dir.join("causal_effects.csv"), &acc.causal_effects()?.to_csv())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSummary {
    pub counts: SweepCounts,
    pub retained: usize,
    pub mean_occupied: f64,
    pub mean_alpha0: f64,
}

/// Runs one chain and stores its trace under `out/trace`.
pub fn fit_to_dir(x: &DMatrix<f64>, config: &RunConfig, out: &Path) -> Result<FitSummary> {
    let (n, q) = x.shape();
    let model = config.model(q)?;
    let schedule = config.schedule()?;
    let allocation = allocation_for(config, n)?;
    let trace_dir = out.join("trace");
    let mut writer = TraceWriter::create(&trace_dir, n, config.light_trace)?;
    let mut acc = if config.light_trace { Some(PosteriorAccumulator::new(n, q, config.response - 1)?) } else { None };
    let mut failure: Option<anyhow::Error> = None;
    let (mut occupied, mut alpha_sum, mut retained) = (0usize, 0.0, 0usize);
    let mut rng = seeds::stream(config.seed, &[seeds::CHAIN, 0]);
    let counts = run_chain_with(x, &model, &allocation, &schedule, &mut rng, |d| {
        if failure.is_some() {
            return;
        }
        let mut seen = vec![false; d.k_active];
        d.xi.iter().for_each(|&k| seen[k] = true);
        occupied += seen.iter().filter(|s| **s).count();
        alpha_sum += d.alpha0;
        retained += 1;
        let step = writer.record(&d).and_then(|_| match acc.as_mut() {
            Some(a) => a.add(&d).map_err(Into::into),
            None => Ok(()),
        });
        if let Err(e) = step {
            failure = Some(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    writer.finish()?;
    if let Some(acc) = &acc {
        write_light_summaries(&trace_dir.join("light"), acc, n, q)?;
    }
    let info = TraceInfo {
        n,
        q,
        iterations: schedule.iterations,
        burn_in: schedule.burn_in,
        thin: schedule.thin,
        retained,
        light: config.light_trace,
        response: config.response,
    };
    io::write(&trace_dir.join("trace.json"), &(serde_json::to_string_pretty(&info)? + "\n"))?;
    let r = retained.max(1) as f64;
    Ok(FitSummary { counts, retained, mean_occupied: occupied as f64 / r, mean_alpha0: alpha_sum / r })
}

pub fn fit_report(config: &RunConfig, x: &DMatrix<f64>, s: &FitSummary) -> String {
    let mut r = String::new();
    let mode = serde_json::to_value(config.mode).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
    let _ = writeln!(r, "mode: {mode}");
    let _ = writeln!(r, "subjects: {}  nodes: {}", x.nrows(), x.ncols());
    let _ = writeln!(r, "iterations: {}  burn-in: {}  thin: {}  retained: {}", config.iterations, config.burn_in, config.thin, s.retained);
    let p = &s.counts.pas;
    let rate = if p.proposed > 0 { p.accepted as f64 / p.proposed as f64 } else { 0.0 };
    let _ = writeln!(r, "DAG proposals: {}  accepted: {} ({:.4})  numerical rejections: {}", p.proposed, p.accepted, rate, p.numerical_failures);
    let _ = writeln!(r, "failed component updates: {}", s.counts.failed_cluster_updates);
    let _ = writeln!(r, "baseline draws: {}", s.counts.baseline_draws);
    let _ = writeln!(r, "mean occupied components: {:.4}", s.mean_occupied);
    let _ = writeln!(r, "mean alpha0: {:.4}", s.mean_alpha0);
    r
}

pub fn cmd_fit(data: &Path, config: &RunConfig, out: &Path) -> Result<()> {
    let x = io::read_matrix(data)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let config_json = config.to_json();
    io::write(&out.join("config.json"), &config_json)?;
    let summary = fit_to_dir(&x, config, out)?;
    let report = fit_report(config, &x, &summary);
    io::write(&out.join("report.txt"), &report)?;
    let details = serde_json::json!({ "data_sha256": io::sha256_hex(&fs::read(data)?) });
    io::write_manifest(out, "fit", config.seed, &config_json, details)?;
    print!("{report}");
    Ok(())
}
