use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dpdag_core::causal::{causal_distance, CausalEffectMatrix};
use dpdag_core::dp::{ClusterSnapshot, Draw, Trace};
use dpdag_core::format_real;
use dpdag_core::summaries::{
    binder_loss, estimate_dag, estimate_dag_greedy, estimate_partition, shd_adjacency, variation_of_information,
    DagEstimate, Partition, PosteriorAccumulator, SimilarityMatrix,
};
use nalgebra::{DMatrix, DVector};

use crate::fit::TraceInfo;
use crate::io;
use crate::simulate::Truth;

#[derive(Debug, Clone, clap::Args)]
pub struct SummarizeArgs {
    /// Output directory of `fit`.
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to `<run>/summary`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// 1-indexed response node.
    #[arg(long, default_value_t = 1)]
    pub response: usize,
    /// Co-clustering threshold for the partition estimate.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Edge-probability threshold for the DAG estimates.
    #[arg(long, default_value_t = 0.5)]
    pub edge_threshold: f64,
    /// Comma-separated 1-indexed subjects whose edge probabilities are written
    /// (all by default).
    #[arg(long, value_delimiter = ',')]
    pub subjects: Vec<usize>,
    /// Simulation directory holding `labels.csv` and `truth/`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Repair cyclic DAG estimates greedily (highest probability first).
    #[arg(long)]
    pub greedy_dag: bool,
}

/// Posterior summaries in the form every downstream step uses.
#[derive(Debug, Clone)]
pub struct Summaries {
    pub similarity: SimilarityMatrix,
    /// One `q x q` matrix per subject.
    pub edge_probs: Vec<DMatrix<f64>>,
    pub causal: CausalEffectMatrix,
}

impl Summaries {
    pub fn from_accumulator(acc: &PosteriorAccumulator, n: usize) -> Result<Self> {
        Ok(Self {
            similarity: acc.similarity.finish()?,
            edge_probs: (0..n).map(|i| acc.edges.probabilities(i)).collect::<dpdag_core::Result<_>>()?,
            causal: acc.causal_effects()?,
        })
    }
}

fn read_columns(path: &Path, skip: usize) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().skip(skip).filter(|l| !l.trim().is_empty()).map(|l| l.split(',').map(str::to_owned).collect()).collect())
}

fn num<T: std::str::FromStr>(cell: &str, path: &Path) -> Result<T> {
    cell.trim().parse().ok().with_context(|| format!("{}: bad value `{cell}`", path.display()))
}

/// Reads a full trace written by `fit`.
pub fn read_trace(dir: &Path, info: &TraceInfo) -> Result<Trace> {
    let alloc_path = dir.join("alloc.csv");
    let alpha_path = dir.join("alpha0.csv");
    let alloc = read_columns(&alloc_path, 1)?;
    let alpha = read_columns(&alpha_path, 1)?;
    if alloc.len() != info.retained || alpha.len() != info.retained {
        bail!("{} is incomplete: expected {} retained draws", dir.display(), info.retained);
    }
    let mut draws = Vec::with_capacity(alloc.len());
    for (row, arow) in alloc.iter().zip(&alpha) {
        if row.len() != info.n + 1 {
            bail!("{}: row has {} cells, expected {}", alloc_path.display(), row.len(), info.n + 1);
        }
        let t: usize = num(&row[0], &alloc_path)?;
        let xi = row[1..].iter().map(|c| num::<usize>(c, &alloc_path).map(|l| l.saturating_sub(1))).collect::<Result<Vec<_>>>()?;
        let k_active = xi.iter().max().map_or(0, |m| m + 1);
        let mut clusters = Vec::with_capacity(k_active);
        for k in 1..=k_active {
            let stem = format!("{t}_{k}");
            let omega = io::read_matrix(&dir.join(format!("omega_{stem}.csv")))?;
            let mu = io::read_matrix(&dir.join(format!("mu_{stem}.csv")))?;
            let dag = io::read_dag(&dir.join(format!("dag_{stem}.txt")))?;
            if omega.shape() != (info.q, info.q) || mu.len() != info.q || dag.q() != info.q {
                bail!("{}: component files for {stem} have the wrong size", dir.display());
            }
            clusters.push(ClusterSnapshot { dag, mu: DVector::from_column_slice(mu.as_slice()), omega });
        }
        draws.push(Draw { iteration: t, xi, clusters, alpha0: num(&arow[1], &alpha_path)?, k_active });
    }
    Ok(Trace { draws, iterations: info.iterations, burn_in: info.burn_in, thin: info.thin })
}

fn read_light(dir: &Path, info: &TraceInfo, response: usize) -> Result<Summaries> {
    if response != info.response - 1 {
        bail!("light trace stores effects on X{} only; rerun fit with --response {}", info.response, response + 1);
    }
    let (n, q) = (info.n, info.q);
    let similarity = SimilarityMatrix { values: io::read_matrix(&dir.join("similarity.csv"))? };
    let path = dir.join("edge_probs.csv");
    let mut edge_probs = vec![DMatrix::zeros(q, q); n];
    for row in read_columns(&path, 1)? {
        if row.len() != 4 {
            bail!("{}: expected subject,from,to,probability", path.display());
        }
        let (i, u, v): (usize, usize, usize) = (num(&row[0], &path)?, num(&row[1], &path)?, num(&row[2], &path)?);
        if i == 0 || i > n || u == 0 || u > q || v == 0 || v > q {
            bail!("{}: index out of range", path.display());
        }
        edge_probs[i - 1][(u - 1, v - 1)] = num(&row[3], &path)?;
    }
    let cpath = dir.join("causal_effects.csv");
    let mut values = DMatrix::from_element(n, q, f64::NAN);
    for (i, row) in read_columns(&cpath, 1)?.iter().enumerate() {
        for (s, cell) in row.iter().enumerate() {
            if !cell.trim().is_empty() {
                values[(i, s)] = num(cell, &cpath)?;
            }
        }
    }
    Ok(Summaries { similarity, edge_probs, causal: CausalEffectMatrix { values, response } })
}

pub fn load_summaries(run: &Path, response: usize) -> Result<(TraceInfo, Summaries)> {
    let dir = run.join("trace");
    let info_path = dir.join("trace.json");
    let info: TraceInfo = serde_json::from_str(
        &fs::read_to_string(&info_path).with_context(|| format!("reading {}", info_path.display()))?,
    )
    .with_context(|| format!("parsing {}", info_path.display()))?;
    if response >= info.q {
        bail!("response X{} out of range for q = {}", response + 1, info.q);
    }
    if info.retained == 0 {
        bail!("the trace in {} has no retained draws", dir.display());
    }
    let s = if info.light {
        read_light(&dir.join("light"), &info, response)?
    } else {
        let trace = read_trace(&dir, &info)?;
        Summaries::from_accumulator(&PosteriorAccumulator::from_trace(&trace, response)?, info.n)?
    };
    Ok((info, s))
}

/// Scores against the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub binder: f64,
    pub vi: f64,
    pub shd: Vec<usize>,
    pub cyclic: usize,
    pub causal_distance: f64,
}

impl Scores {
    pub fn mean_shd(&self) -> f64 {
        self.shd.iter().sum::<usize>() as f64 / self.shd.len() as f64
    }
}

pub fn dag_estimates(s: &Summaries, w: f64, greedy: bool) -> Result<Vec<DagEstimate>> {
    s.edge_probs
        .iter()
        .map(|p| {
            let est = estimate_dag(p, w)?;
            Ok(match (&est, greedy) {
                (DagEstimate::Cyclic { .. }, true) => DagEstimate::Acyclic(estimate_dag_greedy(p, w)?),
                _ => est,
            })
        })
        .collect()
}

/// SHD uses the thresholded graph even when it is cyclic.
pub fn score(s: &Summaries, partition: &Partition, dags: &[DagEstimate], truth: &Truth) -> Result<Scores> {
    let n = partition.len();
    if truth.labels.len() != n {
        bail!("truth has {} subjects, the fit {n}", truth.labels.len());
    }
    let truth_part = Partition::from_labels(&truth.labels);
    let mut shd = Vec::with_capacity(n);
    for (i, est) in dags.iter().enumerate() {
        shd.push(shd_adjacency(&est.adjacency(), &truth.subject_dag(i).adjacency())?);
    }
    let effects = truth.causal_effects(s.causal.response)?;
    Ok(Scores {
        binder: binder_loss(&truth_part, partition)?,
        vi: variation_of_information(&truth_part, partition)?,
        shd,
        cyclic: dags.iter().filter(|d| d.dag().is_none()).count(),
        causal_distance: causal_distance(&s.causal, &effects)?,
    })
}

fn edge_list(adj: &[Vec<bool>]) -> String {
    let mut out = Vec::new();
    for (u, row) in adj.iter().enumerate() {
        for (v, &on) in row.iter().enumerate() {
            if on {
                out.push(format!("{}->{}", u + 1, v + 1));
            }
        }
    }
    out.join(" ")
}

pub fn cmd_summarize(args: &SummarizeArgs) -> Result<()> {
    if args.response == 0 {
        bail!("--response is 1-indexed");
    }
    let response = args.response - 1;
    let (info, s) = load_summaries(&args.run, response)?;
    let out = args.out.clone().unwrap_or_else(|| args.run.join("summary"));
    let partition = estimate_partition(&s.similarity, args.threshold)?;
    let dags = dag_estimates(&s, args.edge_threshold, args.greedy_dag)?;

    io::write(&out.join("similarity.csv"), &s.similarity.to_csv())?;
    let mut part = String::from("subject,cluster\n");
    for (i, l) in partition.labels().iter().enumerate() {
        writeln!(part, "{},{}", i + 1, l + 1)?;
    }
    io::write(&out.join("partition.csv"), &part)?;

    let subjects: Vec<usize> = if args.subjects.is_empty() { (1..=info.n).collect() } else { args.subjects.clone() };
    for &i in &subjects {
        if i == 0 || i > info.n {
            bail!("subject {i} out of range 1..={}", info.n);
        }
        let header = io::node_header(info.q);
        io::write(&out.join("edge_probs").join(format!("subject_{i}.csv")), &io::matrix_to_csv(&s.edge_probs[i - 1], Some(&header)))?;
    }
    let mut est = String::from("subject,status,edges,cycle\n");
    for (i, d) in dags.iter().enumerate() {
        let (status, cycle) = match d {
            DagEstimate::Acyclic(_) => ("acyclic", String::new()),
            DagEstimate::Cyclic { cycle, .. } => {
                ("cyclic", cycle.iter().map(|v| (v + 1).to_string()).collect::<Vec<_>>().join(" "))
            }
        };
        writeln!(est, "{},{status},{},{cycle}", i + 1, edge_list(&d.adjacency()))?;
    }
    io::write(&out.join("dag_estimates.csv"), &est)?;
    io::write(&out.join("causal_effects.csv"), &s.causal.to_csv())?;

    let mut report = String::new();
    writeln!(report, "subjects: {}  nodes: {}  retained draws: {}", info.n, info.q, info.retained)?;
    writeln!(report, "estimated clusters: {} (threshold {})", partition.n_clusters(), args.threshold)?;
    writeln!(report, "cyclic DAG estimates: {} of {}", dags.iter().filter(|d| d.dag().is_none()).count(), info.n)?;
    writeln!(report, "response: X{}", args.response)?;
    if let Some(dir) = &args.truth {
        let truth = Truth::read(dir)?;
        let sc = score(&s, &partition, &dags, &truth)?;
        let mut shd = String::from("subject,shd\n");
        for (i, v) in sc.shd.iter().enumerate() {
            writeln!(shd, "{},{v}", i + 1)?;
        }
        io::write(&out.join("shd.csv"), &shd)?;
        io::write(
            &out.join("metrics.csv"),
            &format!(
                "binder_loss,variation_of_information,mean_shd,cyclic_estimates,causal_distance_x100\n{},{},{},{},{}\n",
                format_real(sc.binder),
                format_real(sc.vi),
                format_real(sc.mean_shd()),
                sc.cyclic,
                format_real(100.0 * sc.causal_distance)
            ),
        )?;
        writeln!(report, "Binder loss: {:.4}", sc.binder)?;
        writeln!(report, "variation of information: {:.4}", sc.vi)?;
        writeln!(report, "mean SHD: {:.3}", sc.mean_shd())?;
        writeln!(report, "average absolute causal distance (x100): {:.3}", 100.0 * sc.causal_distance)?;
    }
    io::write(&out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}
