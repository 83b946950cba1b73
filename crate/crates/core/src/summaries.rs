//! Label-invariant posterior summaries and the metrics used to score them.

use nalgebra::DMatrix;

use crate::causal::{CausalAccumulator, CausalEffectMatrix};
use crate::dp::{Draw, Trace};
use crate::error::{Error, Result};
use crate::graph::Dag;

/// Posterior co-clustering probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: DMatrix<f64>,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(&self.values, None)
    }
}

/// Rows of `m` as CSV, with an optional header line.
pub fn matrix_csv(m: &DMatrix<f64>, header: Option<&[String]>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| crate::format_real(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn check_draw(draw: &Draw, n: usize) -> Result<()> {
    if draw.xi.len() != n {
        return Err(Error::InvalidInput(format!("draw has {} subjects, expected {n}", draw.xi.len())));
    }
    if draw.xi.iter().any(|&k| k >= draw.clusters.len()) {
        return Err(Error::InvalidInput(format!("draw at iteration {} references a missing cluster", draw.iteration)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityAccumulator {
    n: usize,
    /// Upper triangle, row-major.
    counts: Vec<u32>,
    draws: usize,
}

impl SimilarityAccumulator {
    pub fn new(n: usize) -> Self {
        Self { n, counts: vec![0; n * n], draws: 0 }
    }

    pub fn add(&mut self, xi: &[usize]) -> Result<()> {
        if xi.len() != self.n {
            return Err(Error::InvalidInput(format!("{} labels, expected {}", xi.len(), self.n)));
        }
        let k = xi.iter().max().map_or(0, |&m| m + 1);
        let mut members = vec![Vec::new(); k];
        for (i, &l) in xi.iter().enumerate() {
            members[l].push(i);
        }
        for group in &members {
            for (a, &i) in group.iter().enumerate() {
                for &j in &group[a + 1..] {
                    self.counts[i * self.n + j] += 1;
                }
            }
        }
        self.draws += 1;
        Ok(())
    }

    pub fn finish(&self) -> Result<SimilarityMatrix> {
        if self.draws == 0 {
            return Err(Error::InvalidInput("no retained draws".into()));
        }
        let s = self.draws as f64;
        let n = self.n;
        let values = DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => self.counts[i * n + j] as f64 / s,
            std::cmp::Ordering::Greater => self.counts[j * n + i] as f64 / s,
        });
        Ok(SimilarityMatrix { values })
    }
}

pub fn posterior_similarity(trace: &Trace) -> Result<SimilarityMatrix> {
    let n = trace.n_subjects().ok_or_else(|| Error::InvalidInput("empty trace".into()))?;
    let mut acc = SimilarityAccumulator::new(n);
    for d in &trace.draws {
        acc.add(&d.xi)?;
    }
    acc.finish()
}

/// Cluster labels, 0-indexed and numbered by first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    labels: Vec<usize>,
}

impl Partition {
    /// Canonical form of arbitrary labels.
    pub fn from_labels<T: Eq + std::hash::Hash + Copy>(raw: &[T]) -> Self {
        let mut seen = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = seen.len();
                *seen.entry(*l).or_insert(next)
            })
            .collect();
        Self { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Connected components of the graph joining `i` and `j` when their
/// similarity is strictly above `threshold`.
pub fn estimate_partition(sim: &SimilarityMatrix, threshold: f64) -> Result<Partition> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let n = sim.n();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if sim.values[(i, j)] > threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    Ok(Partition::from_labels(&roots))
}

/// Per-subject edge-inclusion counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeAccumulator {
    n: usize,
    q: usize,
    counts: Vec<u32>,
    draws: usize,
}

impl EdgeAccumulator {
    pub fn new(n: usize, q: usize) -> Self {
        Self { n, q, counts: vec![0; n * q * q], draws: 0 }
    }

    pub fn add(&mut self, draw: &Draw) -> Result<()> {
        check_draw(draw, self.n)?;
        let edges: Vec<Vec<(usize, usize)>> = draw.clusters.iter().map(|c| c.dag.edges()).collect();
        let qq = self.q * self.q;
        for (i, &k) in draw.xi.iter().enumerate() {
            for &(u, v) in &edges[k] {
                self.counts[i * qq + u * self.q + v] += 1;
            }
        }
        self.draws += 1;
        Ok(())
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    /// Entry `(u, v)` is the frequency of `u -> v` in the subject's DAG.
    pub fn probabilities(&self, subject: usize) -> Result<DMatrix<f64>> {
        if subject >= self.n {
            return Err(Error::InvalidInput(format!("subject {} out of range for n = {}", subject + 1, self.n)));
        }
        if self.draws == 0 {
            return Err(Error::InvalidInput("no retained draws".into()));
        }
        let base = subject * self.q * self.q;
        let s = self.draws as f64;
        Ok(DMatrix::from_fn(self.q, self.q, |u, v| self.counts[base + u * self.q + v] as f64 / s))
    }
}

pub fn edge_probabilities(trace: &Trace, subject: usize) -> Result<DMatrix<f64>> {
    let first = trace.draws.first().ok_or_else(|| Error::InvalidInput("empty trace".into()))?;
    let q = first.clusters.first().map_or(0, |c| c.dag.q());
    let mut acc = EdgeAccumulator::new(first.xi.len(), q);
    for d in &trace.draws {
        acc.add(d)?;
    }
    acc.probabilities(subject)
}

/// Outcome of thresholding edge probabilities.
#[derive(Debug, Clone, PartialEq)]
pub enum DagEstimate {
    Acyclic(Dag),
    /// The thresholded graph has a directed cycle, listed in edge order.
    Cyclic { adjacency: Vec<Vec<bool>>, cycle: Vec<usize> },
}

impl DagEstimate {
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        match self {
            DagEstimate::Acyclic(d) => d.adjacency(),
            DagEstimate::Cyclic { adjacency, .. } => adjacency.clone(),
        }
    }

    pub fn dag(&self) -> Option<&Dag> {
        match self {
            DagEstimate::Acyclic(d) => Some(d),
            DagEstimate::Cyclic { .. } => None,
        }
    }
}

fn check_probs(probs: &DMatrix<f64>, w: f64) -> Result<()> {
    if probs.nrows() != probs.ncols() {
        return Err(Error::InvalidInput("edge-probability matrix must be square".into()));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidInput("edge probabilities must lie in [0, 1]".into()));
    }
    if !(0.0..1.0).contains(&w) {
        return Err(Error::InvalidInput(format!("threshold must lie in [0, 1), got {w}")));
    }
    Ok(())
}

fn find_cycle(adj: &[Vec<bool>]) -> Option<Vec<usize>> {
    // 0 unvisited, 1 on stack, 2 done
    let q = adj.len();
    let mut state = vec![0u8; q];
    let mut stack: Vec<usize> = Vec::new();
    fn visit(v: usize, adj: &[Vec<bool>], state: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
        state[v] = 1;
        stack.push(v);
        for w in 0..adj.len() {
            if !adj[v][w] {
                continue;
            }
            if state[w] == 1 {
                let start = stack.iter().position(|&x| x == w).unwrap();
                return Some(stack[start..].to_vec());
            }
            if state[w] == 0 {
                if let Some(c) = visit(w, adj, state, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        state[v] = 2;
        None
    }
    (0..q).find_map(|v| if state[v] == 0 { visit(v, adj, &mut state, &mut stack) } else { None })
}

/// Keeps every edge with probability strictly above `w`.
pub fn estimate_dag(probs: &DMatrix<f64>, w: f64) -> Result<DagEstimate> {
    check_probs(probs, w)?;
    let q = probs.nrows();
    let adjacency: Vec<Vec<bool>> = (0..q).map(|u| (0..q).map(|v| u != v && probs[(u, v)] > w).collect()).collect();
    match find_cycle(&adjacency) {
        None => Ok(DagEstimate::Acyclic(Dag::from_adjacency(&adjacency)?)),
        Some(cycle) => Ok(DagEstimate::Cyclic { adjacency, cycle }),
    }
}

/// Extension, not the default rule: adds edges above `w` from most to least
/// probable, skipping any that would close a cycle. Ties are broken by
/// `(u, v)` order.
pub fn estimate_dag_greedy(probs: &DMatrix<f64>, w: f64) -> Result<Dag> {
    check_probs(probs, w)?;
    let q = probs.nrows();
    let mut candidates: Vec<(usize, usize)> =
        (0..q).flat_map(|u| (0..q).map(move |v| (u, v))).filter(|&(u, v)| u != v && probs[(u, v)] > w).collect();
    candidates.sort_by(|a, b| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b)));
    let mut dag = Dag::empty(q)?;
    for (u, v) in candidates {
        if dag.has_edge(v, u) {
            continue;
        }
        if let Ok(next) = dag.apply(&crate::graph::DagOperator::insert(u, v)) {
            dag = next;
        }
    }
    Ok(dag)
}

fn check_pair(a: &Partition, b: &Partition) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("partitions of {} and {} subjects", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("partition metrics need n >= 2".into()));
    }
    Ok(a.len())
}

/// Fraction of subject pairs on which the two partitions disagree.
pub fn binder_loss(c: &Partition, c_hat: &Partition) -> Result<f64> {
    let n = check_pair(c, c_hat)?;
    let (a, b) = (c.labels(), c_hat.labels());
    let mut disagree = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            disagree += usize::from((a[i] == a[j]) != (b[i] == b[j]));
        }
    }
    Ok(2.0 * disagree as f64 / (n * (n - 1)) as f64)
}

/// `(H(c) + H(c_hat) - 2 I(c, c_hat)) / ln n`.
pub fn variation_of_information(c: &Partition, c_hat: &Partition) -> Result<f64> {
    let n = check_pair(c, c_hat)?;
    let (ka, kb) = (c.n_clusters(), c_hat.n_clusters());
    let mut joint = vec![0usize; ka * kb];
    let mut pa = vec![0usize; ka];
    let mut pb = vec![0usize; kb];
    for (&x, &y) in c.labels().iter().zip(c_hat.labels()) {
        joint[x * kb + y] += 1;
        pa[x] += 1;
        pb[y] += 1;
    }
    let nf = n as f64;
    let entropy = |counts: &[usize]| -> f64 {
        counts.iter().filter(|&&m| m > 0).map(|&m| -(m as f64 / nf) * (m as f64 / nf).ln()).sum()
    };
    let mut mutual = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let m = joint[x * kb + y];
            if m > 0 {
                let p = m as f64 / nf;
                mutual += p * (p / ((pa[x] as f64 / nf) * (pb[y] as f64 / nf))).ln();
            }
        }
    }
    let vi = entropy(&pa) + entropy(&pb) - 2.0 * mutual;
    Ok((vi / nf.ln()).max(0.0))
}

/// Structural Hamming distance between two graphs given as adjacency
/// matrices; each unordered pair whose status differs counts once. A pair
/// joined in both directions is its own status.
pub fn shd_adjacency(a: &[Vec<bool>], b: &[Vec<bool>]) -> Result<usize> {
    let q = a.len();
    if b.len() != q || a.iter().chain(b).any(|r| r.len() != q) {
        return Err(Error::InvalidInput("graphs differ in size".into()));
    }
    let mut d = 0;
    for u in 0..q {
        for v in u + 1..q {
            d += usize::from((a[u][v], a[v][u]) != (b[u][v], b[v][u]));
        }
    }
    Ok(d)
}

pub fn shd(d1: &Dag, d2: &Dag) -> Result<usize> {
    if d1.q() != d2.q() {
        return Err(Error::InvalidInput(format!("graphs on {} and {} nodes", d1.q(), d2.q())));
    }
    shd_adjacency(&d1.adjacency(), &d2.adjacency())
}

/// Everything the posterior summaries need, accumulated draw by draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorAccumulator {
    pub similarity: SimilarityAccumulator,
    pub edges: EdgeAccumulator,
    pub causal: CausalAccumulator,
}

impl PosteriorAccumulator {
    pub fn new(n: usize, q: usize, response: usize) -> Result<Self> {
        Ok(Self {
            similarity: SimilarityAccumulator::new(n),
            edges: EdgeAccumulator::new(n, q),
            causal: CausalAccumulator::new(n, q, response)?,
        })
    }

    pub fn from_trace(trace: &Trace, response: usize) -> Result<Self> {
        let first = trace.draws.first().ok_or_else(|| Error::InvalidInput("empty trace".into()))?;
        let q = first.clusters.first().map_or(0, |c| c.dag.q());
        let mut acc = Self::new(first.xi.len(), q, response)?;
        for d in &trace.draws {
            acc.add(d)?;
        }
        Ok(acc)
    }

    pub fn add(&mut self, draw: &Draw) -> Result<()> {
        self.similarity.add(&draw.xi)?;
        self.edges.add(draw)?;
        self.causal.add(draw)
    }

    pub fn draws(&self) -> usize {
        self.edges.draws()
    }

    pub fn causal_effects(&self) -> Result<CausalEffectMatrix> {
        self.causal.finish()
    }
}
