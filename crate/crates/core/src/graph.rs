//! Directed acyclic graphs, local move operators and the skeleton-based
//! structure prior.
//!
//! Nodes are stored 0-indexed; the text format and the command line use
//! 1-indexed labels. Parent and child sets are `u64` bitmasks, so graphs are
//! limited to [`MAX_NODES`] nodes.

use std::fmt;

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const MAX_NODES: usize = 64;

/// A directed acyclic graph on `q` labelled nodes.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Dag {
    q: usize,
    parents: Vec<u64>,
    children: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OperatorKind {
    Insert,
    Delete,
    Reverse,
}

/// A single-edge modification of a DAG. `from -> to` names the edge being
/// inserted, deleted or reversed (as it exists before the move).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DagOperator {
    pub kind: OperatorKind,
    pub from: usize,
    pub to: usize,
}

impl DagOperator {
    pub fn insert(from: usize, to: usize) -> Self {
        Self { kind: OperatorKind::Insert, from, to }
    }

    pub fn delete(from: usize, to: usize) -> Self {
        Self { kind: OperatorKind::Delete, from, to }
    }

    pub fn reverse(from: usize, to: usize) -> Self {
        Self { kind: OperatorKind::Reverse, from, to }
    }

    /// The operator that undoes `self` once applied.
    pub fn inverse(&self) -> Self {
        match self.kind {
            OperatorKind::Insert => Self::delete(self.from, self.to),
            OperatorKind::Delete => Self::insert(self.from, self.to),
            OperatorKind::Reverse => Self::reverse(self.to, self.from),
        }
    }

    /// Nodes whose parent set changes under this operator.
    pub fn changed_nodes(&self) -> ([usize; 2], usize) {
        match self.kind {
            OperatorKind::Insert | OperatorKind::Delete => ([self.to, self.to], 1),
            OperatorKind::Reverse => ([self.to, self.from], 2),
        }
    }
}

impl fmt::Display for DagOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            OperatorKind::Insert => "InsertD",
            OperatorKind::Delete => "DeleteD",
            OperatorKind::Reverse => "ReverseD",
        };
        write!(f, "{}({} -> {})", name, self.from + 1, self.to + 1)
    }
}

fn bits(mut mask: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if mask == 0 {
            None
        } else {
            let i = mask.trailing_zeros() as usize;
            mask &= mask - 1;
            Some(i)
        }
    })
}

fn check_q(q: usize) -> Result<()> {
    if q == 0 {
        return Err(Error::InvalidInput("a graph needs at least one node".into()));
    }
    if q > MAX_NODES {
        return Err(Error::TooManyNodes { q, max: MAX_NODES });
    }
    Ok(())
}

/// Returns true iff the square 0/1 matrix `adjacency` (row = tail, column =
/// head) admits a topological order.
pub fn is_acyclic(adjacency: &[Vec<bool>]) -> Result<bool> {
    let q = adjacency.len();
    for (i, row) in adjacency.iter().enumerate() {
        if row.len() != q {
            return Err(Error::InvalidInput(format!(
                "adjacency row {} has length {}, expected {}",
                i + 1,
                row.len(),
                q
            )));
        }
        if row[i] {
            return Err(Error::InvalidInput(format!("self-loop on node {}", i + 1)));
        }
    }
    // Kahn elimination of zero in-degree nodes.
    let mut indegree: Vec<usize> = (0..q)
        .map(|v| (0..q).filter(|&u| adjacency[u][v]).count())
        .collect();
    let mut stack: Vec<usize> = (0..q).filter(|&v| indegree[v] == 0).collect();
    let mut removed = 0;
    while let Some(u) = stack.pop() {
        removed += 1;
        for v in 0..q {
            if adjacency[u][v] {
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    stack.push(v);
                }
            }
        }
    }
    Ok(removed == q)
}

impl Dag {
    pub fn empty(q: usize) -> Result<Self> {
        check_q(q)?;
        Ok(Self { q, parents: vec![0; q], children: vec![0; q] })
    }

    /// Builds a DAG from 0-indexed `(from, to)` pairs.
    pub fn from_edges(q: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut dag = Self::empty(q)?;
        for &(u, v) in edges {
            dag.check_node(u)?;
            dag.check_node(v)?;
            if u == v {
                return Err(Error::InvalidInput(format!("self-loop on node {}", u + 1)));
            }
            if dag.has_edge(u, v) || dag.has_edge(v, u) {
                return Err(Error::InvalidInput(format!(
                    "duplicate or antiparallel edge {} -> {}",
                    u + 1,
                    v + 1
                )));
            }
            dag.set_edge(u, v);
        }
        if dag.topological_order().is_none() {
            return Err(Error::InvalidInput("edge set contains a directed cycle".into()));
        }
        Ok(dag)
    }

    pub fn from_adjacency(adjacency: &[Vec<bool>]) -> Result<Self> {
        if !is_acyclic(adjacency)? {
            return Err(Error::InvalidInput("adjacency matrix contains a directed cycle".into()));
        }
        let q = adjacency.len();
        let mut edges = Vec::new();
        for (u, row) in adjacency.iter().enumerate() {
            for (v, &e) in row.iter().enumerate() {
                if e {
                    edges.push((u, v));
                }
            }
        }
        Self::from_edges(q, &edges)
    }

    /// The complete DAG in which every node `j` has parents `{j+1, .., q-1}`.
    pub fn complete(q: usize) -> Result<Self> {
        let edges: Vec<_> = (0..q).flat_map(|j| (j + 1..q).map(move |u| (u, j))).collect();
        Self::from_edges(q, &edges)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    fn check_node(&self, j: usize) -> Result<()> {
        if j >= self.q {
            Err(Error::NodeOutOfRange { node: j, q: self.q })
        } else {
            Ok(())
        }
    }

    fn set_edge(&mut self, u: usize, v: usize) {
        self.parents[v] |= 1u64 << u;
        self.children[u] |= 1u64 << v;
    }

    fn clear_edge(&mut self, u: usize, v: usize) {
        self.parents[v] &= !(1u64 << u);
        self.children[u] &= !(1u64 << v);
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.parents[v] >> u & 1 == 1
    }

    pub fn parent_mask(&self, j: usize) -> u64 {
        self.parents[j]
    }

    /// Parents of `j` in increasing node order.
    pub fn parents(&self, j: usize) -> Result<Vec<usize>> {
        self.check_node(j)?;
        Ok(bits(self.parents[j]).collect())
    }

    /// Unchecked variant of [`Dag::parents`] for hot loops.
    pub fn parents_of(&self, j: usize) -> Vec<usize> {
        bits(self.parents[j]).collect()
    }

    pub fn children_of(&self, j: usize) -> Vec<usize> {
        bits(self.children[j]).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(|p| p.count_ones() as usize).sum()
    }

    /// All edges `(from, to)`, ordered by head then tail.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.q).flat_map(|v| bits(self.parents[v]).map(move |u| (u, v))).collect()
    }

    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        (0..self.q).map(|u| (0..self.q).map(|v| self.has_edge(u, v)).collect()).collect()
    }

    /// A topological order (parents before children), or `None` if the stored
    /// edge set is cyclic.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut placed = 0u64;
        let mut order = Vec::with_capacity(self.q);
        while order.len() < self.q {
            let before = order.len();
            for v in 0..self.q {
                if placed >> v & 1 == 0 && self.parents[v] & !placed == 0 {
                    order.push(v);
                    placed |= 1u64 << v;
                }
            }
            if order.len() == before {
                return None;
            }
        }
        Some(order)
    }

    /// `reach[u]` is the set of nodes reachable from `u` by a directed path of
    /// length at least one.
    fn reachability(&self) -> Vec<u64> {
        let order = self.topological_order().expect("Dag invariant: acyclic");
        let mut reach = vec![0u64; self.q];
        for &u in order.iter().rev() {
            let mut r = self.children[u];
            for c in bits(self.children[u]) {
                r |= reach[c];
            }
            reach[u] = r;
        }
        reach
    }

    fn reverse_is_acyclic(&self, u: usize, v: usize, reach: &[u64]) -> bool {
        // Reversing u -> v closes a cycle iff another directed path u ~> v exists.
        bits(self.children[u] & !(1u64 << v)).all(|c| reach[c] >> v & 1 == 0)
    }

    /// Every valid insertion, deletion and reversal, each listed once.
    pub fn enumerate_operators(&self) -> Vec<DagOperator> {
        let reach = self.reachability();
        let mut ops = Vec::new();
        for u in 0..self.q {
            for v in 0..self.q {
                if u == v {
                    continue;
                }
                if self.has_edge(u, v) {
                    ops.push(DagOperator::delete(u, v));
                    if self.reverse_is_acyclic(u, v, &reach) {
                        ops.push(DagOperator::reverse(u, v));
                    }
                } else if !self.has_edge(v, u) && reach[v] >> u & 1 == 0 {
                    ops.push(DagOperator::insert(u, v));
                }
            }
        }
        ops
    }

    /// `|enumerate_operators()|` without materialising the list.
    pub fn operator_count(&self) -> usize {
        let reach = self.reachability();
        let mut count = 0;
        for u in 0..self.q {
            for v in 0..self.q {
                if u == v {
                    continue;
                }
                if self.has_edge(u, v) {
                    count += 1 + usize::from(self.reverse_is_acyclic(u, v, &reach));
                } else if !self.has_edge(v, u) && reach[v] >> u & 1 == 0 {
                    count += 1;
                }
            }
        }
        count
    }

    /// Applies `op`, returning the successor graph. Invalid moves are errors.
    pub fn apply(&self, op: &DagOperator) -> Result<Dag> {
        let (u, v) = (op.from, op.to);
        self.check_node(u)?;
        self.check_node(v)?;
        if u == v {
            return Err(Error::InvalidMove(format!("{op}: self-loop")));
        }
        let mut next = self.clone();
        match op.kind {
            OperatorKind::Insert => {
                if self.has_edge(u, v) || self.has_edge(v, u) {
                    return Err(Error::InvalidMove(format!("{op}: nodes already adjacent")));
                }
                if self.reachability()[v] >> u & 1 == 1 {
                    return Err(Error::InvalidMove(format!("{op}: creates a cycle")));
                }
                next.set_edge(u, v);
            }
            OperatorKind::Delete => {
                if !self.has_edge(u, v) {
                    return Err(Error::InvalidMove(format!("{op}: edge missing")));
                }
                next.clear_edge(u, v);
            }
            OperatorKind::Reverse => {
                if !self.has_edge(u, v) {
                    return Err(Error::InvalidMove(format!("{op}: edge missing")));
                }
                if !self.reverse_is_acyclic(u, v, &self.reachability()) {
                    return Err(Error::InvalidMove(format!("{op}: creates a cycle")));
                }
                next.clear_edge(u, v);
                next.set_edge(v, u);
            }
        }
        Ok(next)
    }

    /// Undirected adjacency (skeleton) as a set of `(min, max)` pairs.
    pub fn skeleton(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<_> = self.edges().into_iter().map(|(u, v)| (u.min(v), u.max(v))).collect();
        pairs.sort_unstable();
        pairs
    }

    /// Unshielded colliders `a -> c <- b` with `a < b` and `a`, `b` non-adjacent.
    pub fn v_structures(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for c in 0..self.q {
            let pa = self.parents_of(c);
            for (i, &a) in pa.iter().enumerate() {
                for &b in &pa[i + 1..] {
                    if !self.has_edge(a, b) && !self.has_edge(b, a) {
                        out.push((a, c, b));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Same skeleton and same v-structures.
    pub fn markov_equivalent(&self, other: &Dag) -> bool {
        self.q == other.q
            && self.skeleton() == other.skeleton()
            && self.v_structures() == other.v_structures()
    }

    /// Text form: a `q=<n>` header followed by one `u v` line (1-indexed) per edge.
    pub fn to_text(&self) -> String {
        let mut s = format!("q={}\n", self.q);
        for (u, v) in self.edges() {
            s.push_str(&format!("{} {}\n", u + 1, v + 1));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("missing `q=<n>` header".into()))?;
        let q: usize = header
            .strip_prefix("q=")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| Error::InvalidInput(format!("bad header `{header}`")))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(u)), Some(Ok(v)), None) if u >= 1 && v >= 1 => edges.push((u - 1, v - 1)),
                _ => return Err(Error::InvalidInput(format!("bad edge line `{line}`"))),
            }
        }
        Self::from_edges(q, &edges)
    }
}

impl fmt::Debug for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let edges: Vec<String> = self.edges().iter().map(|(u, v)| format!("{}->{}", u + 1, v + 1)).collect();
        write!(f, "Dag(q={}, {{{}}})", self.q, edges.join(", "))
    }
}

/// Every DAG on `q` nodes, by brute force over edge orientations. Only sensible
/// for `q <= 4` (543 graphs).
pub fn enumerate_dags(q: usize) -> Result<Vec<Dag>> {
    check_q(q)?;
    if q > 5 {
        return Err(Error::InvalidInput(format!("exhaustive enumeration on {q} nodes")));
    }
    let pairs: Vec<(usize, usize)> = (0..q).flat_map(|u| (u + 1..q).map(move |v| (u, v))).collect();
    let total = 3usize.pow(pairs.len() as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut c = code;
        let mut edges = Vec::new();
        for &(u, v) in &pairs {
            match c % 3 {
                1 => edges.push((u, v)),
                2 => edges.push((v, u)),
                _ => {}
            }
            c /= 3;
        }
        if let Ok(d) = Dag::from_edges(q, &edges) {
            out.push(d);
        }
    }
    Ok(out)
}

/// Beta-binomial prior on the skeleton: `pi ~ Beta(a, b)` and each of the
/// `q(q-1)/2` node pairs is adjacent with probability `pi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DagPrior {
    pub a: f64,
    pub b: f64,
}

impl DagPrior {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "DAG prior hyperparameters must be positive (a={a}, b={b})"
            )));
        }
        Ok(Self { a, b })
    }

    /// Sparsity default `a = 1`, `b = (2q - 2) / 3`.
    pub fn sparse(q: usize) -> Self {
        Self { a: 1.0, b: ((2 * q) as f64 - 2.0).max(1.0) / 3.0 }
    }

    /// Log prior of a skeleton with `edges` edges on `q` nodes. The constant
    /// relating `p(D)` to `p(S^D)` is omitted.
    pub fn log_prob_edges(&self, edges: usize, q: usize) -> f64 {
        let slots = (q * q.saturating_sub(1) / 2) as f64;
        let k = edges as f64;
        ln_gamma(k + self.a) + ln_gamma(slots - k + self.b) - ln_gamma(slots + self.a + self.b)
            + ln_gamma(self.a + self.b)
            - ln_gamma(self.a)
            - ln_gamma(self.b)
    }

    pub fn log_prob(&self, dag: &Dag) -> f64 {
        self.log_prob_edges(dag.edge_count(), dag.q())
    }
}

pub fn log_dag_prior(dag: &Dag, a: f64, b: f64) -> Result<f64> {
    Ok(DagPrior::new(a, b)?.log_prob(dag))
}

/// How the Hastings correction `q(D | D~) / q(D~ | D)` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProposalRatio {
    /// `|O_D| / |O_D~|`.
    #[default]
    Exact,
    /// Treat the ratio as one.
    Unit,
}

impl ProposalRatio {
    pub fn log_ratio(&self, current_ops: usize, proposed: &Dag) -> f64 {
        match self {
            ProposalRatio::Exact => (current_ops as f64).ln() - (proposed.operator_count() as f64).ln(),
            ProposalRatio::Unit => 0.0,
        }
    }
}

/// Runs `steps` Metropolis-Hastings moves targeting the structure prior, from
/// `start`, and returns the final state.
pub fn sample_dag_prior_from<R: Rng + ?Sized>(
    start: Dag,
    steps: usize,
    prior: &DagPrior,
    ratio: ProposalRatio,
    rng: &mut R,
) -> Dag {
    let mut current = start;
    let mut current_log_prior = prior.log_prob(&current);
    for _ in 0..steps {
        let ops = current.enumerate_operators();
        if ops.is_empty() {
            break;
        }
        let op = ops[rng.random_range(0..ops.len())];
        let proposed = current.apply(&op).expect("enumerated operators are valid");
        let proposed_log_prior = prior.log_prob(&proposed);
        let log_r = proposed_log_prior - current_log_prior + ratio.log_ratio(ops.len(), &proposed);
        if log_r >= 0.0 || rng.random::<f64>().ln() < log_r {
            current = proposed;
            current_log_prior = proposed_log_prior;
        }
    }
    current
}

/// Approximate draw from the structure prior: `steps` MH moves from the empty graph.
pub fn sample_dag_prior<R: Rng + ?Sized>(
    q: usize,
    steps: usize,
    prior: &DagPrior,
    ratio: ProposalRatio,
    rng: &mut R,
) -> Result<Dag> {
    if steps == 0 {
        return Err(Error::InvalidInput("prior DAG sampler needs at least one step".into()));
    }
    Ok(sample_dag_prior_from(Dag::empty(q)?, steps, prior, ratio, rng))
}
