//! Gaussian DAG models under the Normal-DAG-Wishart prior.
//!
//! A cluster's `(mu, Omega)` is carried in node-wise Cholesky form: for node
//! `j` with parents `pa(j)`, `d_jj` is the conditional variance, `l_col` the
//! (negated) regression coefficients on the parents and `eta` the intercept,
//! so that `X_j = eta_j - l_col' x_pa + eps_j` with `eps_j ~ N(0, d_jj)`.
//! With `L` unit-diagonal carrying `l_col` in the parent rows of column `j`,
//! the precision is `Omega = L D^-1 L'`.
//!
//! The prior on each node's `(d_jj, l_col, eta_j)` is induced from a single
//! Normal-Wishart `NW(a_mu, m, a_omega, U)` on the complete model and depends
//! on the DAG only through `|pa(j)|`, so Markov-equivalent DAGs receive the
//! same marginal likelihood.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::Dag;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Normal-Wishart hyperparameters `(a_mu, m, a_omega, U)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub a_mu: f64,
    pub m: DVector<f64>,
    pub a_omega: f64,
    pub u: DMatrix<f64>,
}

impl Hyperparams {
    pub fn new(a_mu: f64, m: DVector<f64>, a_omega: f64, u: DMatrix<f64>) -> Result<Self> {
        let q = m.len();
        if q == 0 {
            return Err(Error::InvalidInput("hyperparameters need q >= 1".into()));
        }
        if !(a_mu > 0.0 && a_mu.is_finite()) {
            return Err(Error::InvalidInput(format!("a_mu must be positive, got {a_mu}")));
        }
        if !(a_omega > q as f64 - 1.0 && a_omega.is_finite()) {
            return Err(Error::InvalidInput(format!("a_omega must exceed q - 1 = {}, got {a_omega}", q - 1)));
        }
        if u.nrows() != q || u.ncols() != q {
            return Err(Error::InvalidInput(format!("U must be {q}x{q}")));
        }
        if m.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite hyperparameter".into()));
        }
        if (&u - u.transpose()).amax() > 1e-12 * u.amax().max(1.0) {
            return Err(Error::InvalidInput("U must be symmetric".into()));
        }
        if Cholesky::new(u.clone()).is_none() {
            return Err(Error::InvalidInput("U must be positive definite".into()));
        }
        Ok(Self { a_mu, m, a_omega, u })
    }

    /// `U = I_q`, `a_mu = 1`, `m = 0`, `a_omega = q`: a prior worth one observation.
    pub fn default_for(q: usize) -> Self {
        Self {
            a_mu: 1.0,
            m: DVector::zeros(q),
            a_omega: q as f64,
            u: DMatrix::identity(q, q),
        }
    }

    pub fn q(&self) -> usize {
        self.m.len()
    }

    /// Inverse-gamma shape (times two) for a node with `pa_size` parents.
    pub fn node_shape(&self, pa_size: usize) -> f64 {
        self.a_omega + pa_size as f64 - self.q() as f64 + 1.0
    }
}

/// Parameters of one node's local regression.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeParams {
    pub eta: f64,
    pub l_col: DVector<f64>,
    pub d: f64,
}

/// One mixture component: a DAG with its node parameters and the implied
/// mean and precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    dag: Dag,
    parents: Vec<Vec<usize>>,
    nodes: Vec<NodeParams>,
    mu: DVector<f64>,
    omega: DMatrix<f64>,
}

impl ClusterParams {
    pub fn new(dag: Dag, nodes: Vec<NodeParams>) -> Result<Self> {
        let q = dag.q();
        if nodes.len() != q {
            return Err(Error::InvalidInput(format!("expected {q} node parameter sets, got {}", nodes.len())));
        }
        let parents: Vec<Vec<usize>> = (0..q).map(|j| dag.parents_of(j)).collect();
        for (j, (node, pa)) in nodes.iter().zip(&parents).enumerate() {
            if !(node.d > 0.0 && node.d.is_finite()) {
                return Err(Error::InvalidInput(format!("node {}: conditional variance must be positive", j + 1)));
            }
            if node.l_col.len() != pa.len() {
                return Err(Error::InvalidInput(format!(
                    "node {}: {} regression coefficients for {} parents",
                    j + 1,
                    node.l_col.len(),
                    pa.len()
                )));
            }
        }
        let omega = assemble_precision(&dag, &nodes)?;
        let mu = mean_from_nodes(&dag, &nodes);
        Ok(Self { dag, parents, nodes, mu, omega })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn nodes(&self) -> &[NodeParams] {
        &self.nodes
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn q(&self) -> usize {
        self.dag.q()
    }

    /// Log density of row `i` of `x` under the factorised DAG likelihood.
    pub fn row_log_density(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        let mut total = 0.0;
        for (j, (node, pa)) in self.nodes.iter().zip(&self.parents).enumerate() {
            let mut mean = node.eta;
            for (k, &p) in pa.iter().enumerate() {
                mean -= node.l_col[k] * x[(i, p)];
            }
            let r = x[(i, j)] - mean;
            total -= 0.5 * (LN_2PI + node.d.ln() + r * r / node.d);
        }
        total
    }
}

/// Sample mean, centred scatter `S` and mean-shift scatter `S0 = (xbar - m)(xbar - m)'`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub n: usize,
    pub xbar: DVector<f64>,
    pub s: DMatrix<f64>,
    pub s0: DMatrix<f64>,
}

impl SuffStats {
    /// Statistics of the rows `rows` of `x` (all rows if `None`).
    pub fn from_rows(x: &DMatrix<f64>, rows: Option<&[usize]>, m: &DVector<f64>) -> Self {
        let q = x.ncols();
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..x.nrows()).collect();
                &all
            }
        };
        let n = rows.len();
        let mut xbar = DVector::zeros(q);
        for &i in rows {
            for j in 0..q {
                xbar[j] += x[(i, j)];
            }
        }
        if n > 0 {
            xbar /= n as f64;
        }
        let mut s = DMatrix::zeros(q, q);
        let mut centred = vec![0.0; q];
        for &i in rows {
            for j in 0..q {
                centred[j] = x[(i, j)] - xbar[j];
            }
            for a in 0..q {
                for b in a..q {
                    s[(a, b)] += centred[a] * centred[b];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                s[(a, b)] = s[(b, a)];
            }
        }
        let shift = if n > 0 { &xbar - m } else { DVector::zeros(q) };
        let s0 = &shift * shift.transpose();
        Self { n, xbar, s, s0 }
    }
}

pub fn suff_stats(x: &DMatrix<f64>, m: &DVector<f64>) -> Result<SuffStats> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::InvalidInput("empty data matrix".into()));
    }
    if x.ncols() != m.len() {
        return Err(Error::InvalidInput(format!("data has {} columns, prior mean has {}", x.ncols(), m.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("data contain non-finite entries".into()));
    }
    Ok(SuffStats::from_rows(x, None, m))
}

/// Conjugate Normal-Wishart update.
pub fn posterior_hyperparams(h: &Hyperparams, stats: &SuffStats) -> Hyperparams {
    if stats.n == 0 {
        return h.clone();
    }
    let n = stats.n as f64;
    let a_mu = h.a_mu + n;
    let m = (&h.m * h.a_mu + &stats.xbar * n) / a_mu;
    let mut u = &h.u + &stats.s + &stats.s0 * (h.a_mu * n / a_mu);
    // keep exact symmetry for the block Cholesky factorisations
    u = (&u + u.transpose()) * 0.5;
    Hyperparams { a_mu, m, a_omega: h.a_omega + n, u }
}

fn sub_matrix(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| a[(idx[r], idx[c])])
}

/// `(log |U_pa|, U_jj|pa)` from one Cholesky factorisation of `U` restricted
/// to `pa` followed by `j`.
fn family_block(u: &DMatrix<f64>, j: usize, parents: &[usize]) -> Result<(f64, f64)> {
    let mut fam = parents.to_vec();
    fam.push(j);
    let chol = Cholesky::new(sub_matrix(u, &fam)).ok_or(Error::NotPositiveDefinite { node: j })?;
    let l = chol.l_dirty();
    let p = parents.len();
    let logdet_pa = (0..p).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let cond = l[(p, p)] * l[(p, p)];
    if !(cond > 0.0 && cond.is_finite()) {
        return Err(Error::NotPositiveDefinite { node: j });
    }
    Ok((logdet_pa, cond))
}

/// Parent-block Cholesky factor and the prior mean `-U_pa^-1 U_pa,j` of `l_col`.
fn parent_regression(u: &DMatrix<f64>, j: usize, parents: &[usize]) -> Result<(Cholesky<f64, Dyn>, DVector<f64>, f64)> {
    let chol = Cholesky::new(sub_matrix(u, parents)).ok_or(Error::NotPositiveDefinite { node: j })?;
    let cross = DVector::from_iterator(parents.len(), parents.iter().map(|&p| u[(p, j)]));
    let coef = chol.solve(&cross);
    let cond = u[(j, j)] - cross.dot(&coef);
    if !(cond > 0.0 && cond.is_finite()) {
        return Err(Error::NotPositiveDefinite { node: j });
    }
    Ok((chol, -coef, cond))
}

/// Draws `(d_jj, l_col, eta_j)` for node `j` of `dag` from the Normal-DAG-Wishart
/// distribution with hyperparameters `h` (prior or posterior).
pub fn sample_node_params<R: Rng + ?Sized>(dag: &Dag, j: usize, h: &Hyperparams, rng: &mut R) -> Result<NodeParams> {
    let parents = dag.parents(j)?;
    sample_node_params_for(&parents, j, h, rng)
}

pub(crate) fn sample_node_params_for<R: Rng + ?Sized>(
    parents: &[usize],
    j: usize,
    h: &Hyperparams,
    rng: &mut R,
) -> Result<NodeParams> {
    let shape = h.node_shape(parents.len());
    if !(shape > 0.0) {
        return Err(Error::InvalidInput(format!("node {}: non-positive inverse-gamma shape", j + 1)));
    }
    let (chol, mean_l, cond) = parent_regression(&h.u, j, parents)?;
    let precision = Gamma::new(shape / 2.0, 2.0 / cond)
        .map_err(|e| Error::Numerical(format!("node {}: {e}", j + 1)))?
        .sample(rng);
    let d = 1.0 / precision;
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::Numerical(format!("node {}: degenerate conditional variance draw", j + 1)));
    }
    // l ~ N(mean_l, d U_pa^-1): solve C' w = z with U_pa = C C'.
    let p = parents.len();
    let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let mut w = z;
    if p > 0 && !chol.l_dirty().tr_solve_lower_triangular_mut(&mut w) {
        // unreachable for a successful factorisation, kept as an error path
        return Err(Error::NotPositiveDefinite { node: j });
    }
    let l_col = mean_l + w * d.sqrt();
    let m_pa: f64 = parents.iter().zip(l_col.iter()).map(|(&pa, l)| l * h.m[pa]).sum();
    let eta_mean = h.m[j] + m_pa;
    let eta = eta_mean + (d / h.a_mu).sqrt() * rng.sample::<f64, _>(StandardNormal);
    Ok(NodeParams { eta, l_col, d })
}

/// Draws a full set of node parameters for `dag`.
pub fn sample_cluster_params<R: Rng + ?Sized>(dag: &Dag, h: &Hyperparams, rng: &mut R) -> Result<ClusterParams> {
    let nodes = (0..dag.q())
        .map(|j| sample_node_params_for(&dag.parents_of(j), j, h, rng))
        .collect::<Result<Vec<_>>>()?;
    ClusterParams::new(dag.clone(), nodes)
}

/// Maps `(mu, Sigma)` onto node parameters under `dag`.
pub fn reparameterize(mu: &DVector<f64>, sigma: &DMatrix<f64>, dag: &Dag) -> Result<Vec<NodeParams>> {
    let q = dag.q();
    if mu.len() != q || sigma.nrows() != q || sigma.ncols() != q {
        return Err(Error::InvalidInput("dimension mismatch between (mu, Sigma) and the DAG".into()));
    }
    (0..q)
        .map(|j| {
            let pa = dag.parents_of(j);
            let (_, l_col, d) = parent_regression(sigma, j, &pa)?;
            let eta = mu[j] + pa.iter().zip(l_col.iter()).map(|(&p, l)| l * mu[p]).sum::<f64>();
            Ok(NodeParams { eta, l_col, d })
        })
        .collect()
}

/// `Omega = L D^-1 L'`.
pub fn assemble_precision(dag: &Dag, nodes: &[NodeParams]) -> Result<DMatrix<f64>> {
    let q = dag.q();
    let mut l = DMatrix::<f64>::identity(q, q);
    for (j, node) in nodes.iter().enumerate() {
        if !(node.d > 0.0) {
            return Err(Error::InvalidInput(format!("node {}: conditional variance must be positive", j + 1)));
        }
        for (k, p) in dag.parents_of(j).into_iter().enumerate() {
            l[(p, j)] = node.l_col[k];
        }
    }
    let mut scaled = l.clone();
    for (j, node) in nodes.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / node.d);
    }
    let omega = &scaled * l.transpose();
    Ok((&omega + omega.transpose()) * 0.5)
}

/// `mu_j = eta_j - l_col' mu_pa(j)`, solved along a topological order.
pub fn mean_from_nodes(dag: &Dag, nodes: &[NodeParams]) -> DVector<f64> {
    let order = dag.topological_order().expect("Dag invariant: acyclic");
    let mut mu = DVector::zeros(dag.q());
    for j in order {
        let pa = dag.parents_of(j);
        mu[j] = nodes[j].eta - pa.iter().zip(nodes[j].l_col.iter()).map(|(&p, l)| l * mu[p]).sum::<f64>();
    }
    mu
}

/// Factorised Gaussian DAG log-likelihood of every row of `x`.
pub fn log_likelihood(x: &DMatrix<f64>, cluster: &ClusterParams) -> f64 {
    (0..x.nrows()).map(|i| cluster.row_log_density(x, i)).sum()
}

/// Closed-form marginal likelihoods of node-wise local regressions for one
/// dataset, caching the prior and posterior hyperparameters.
#[derive(Debug, Clone)]
pub struct NodeScorer {
    prior: Hyperparams,
    posterior: Hyperparams,
    n: usize,
}

impl NodeScorer {
    pub fn new(prior: &Hyperparams, stats: &SuffStats) -> Self {
        Self { prior: prior.clone(), posterior: posterior_hyperparams(prior, stats), n: stats.n }
    }

    pub fn from_rows(prior: &Hyperparams, x: &DMatrix<f64>, rows: Option<&[usize]>) -> Self {
        Self::new(prior, &SuffStats::from_rows(x, rows, &prior.m))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn prior(&self) -> &Hyperparams {
        &self.prior
    }

    pub fn posterior(&self) -> &Hyperparams {
        &self.posterior
    }

    /// `log m(X_j | X_pa, D)`.
    pub fn log_marginal(&self, j: usize, parents: &[usize]) -> Result<f64> {
        if self.n == 0 {
            return Ok(0.0);
        }
        let shape = self.prior.node_shape(parents.len());
        let shape_post = self.posterior.node_shape(parents.len());
        if !(shape > 0.0) {
            return Err(Error::InvalidInput(format!("node {}: non-positive inverse-gamma shape", j + 1)));
        }
        let (logdet_prior, cond_prior) = family_block(&self.prior.u, j, parents)?;
        let (logdet_post, cond_post) = family_block(&self.posterior.u, j, parents)?;
        let n = self.n as f64;
        Ok(-0.5 * n * (2.0 * PI).ln()
            + 0.5 * (self.prior.a_mu.ln() - self.posterior.a_mu.ln())
            + 0.5 * (logdet_prior - logdet_post)
            + ln_gamma(shape_post / 2.0)
            - ln_gamma(shape / 2.0)
            + 0.5 * shape * (cond_prior / 2.0).ln()
            - 0.5 * shape_post * (cond_post / 2.0).ln())
    }

    /// Sum of node marginals in fixed node order.
    pub fn log_marginal_dag(&self, dag: &Dag) -> Result<f64> {
        (0..dag.q()).map(|j| self.log_marginal(j, &dag.parents_of(j))).sum()
    }
}

/// `log m(X_j | X_pa(j))` for node `j` with the given parents.
pub fn log_marginal_node(x: &DMatrix<f64>, j: usize, parents: &[usize], h: &Hyperparams) -> Result<f64> {
    if x.ncols() != h.q() {
        return Err(Error::InvalidInput("data and hyperparameter dimensions differ".into()));
    }
    if j >= h.q() || parents.iter().any(|&p| p >= h.q() || p == j) {
        return Err(Error::InvalidInput("node or parent index out of range".into()));
    }
    NodeScorer::from_rows(h, x, None).log_marginal(j, parents)
}

pub fn log_marginal_dag(x: &DMatrix<f64>, dag: &Dag, h: &Hyperparams) -> Result<f64> {
    if x.ncols() != h.q() || dag.q() != h.q() {
        return Err(Error::InvalidInput("data, DAG and hyperparameter dimensions differ".into()));
    }
    NodeScorer::from_rows(h, x, None).log_marginal_dag(dag)
}

/// Dense `log N_q(x | mu, Omega^-1)` summed over rows.
pub fn dense_gaussian_log_density(x: &DMatrix<f64>, mu: &DVector<f64>, omega: &DMatrix<f64>) -> Result<f64> {
    let q = mu.len();
    let chol = Cholesky::new(omega.clone()).ok_or_else(|| Error::Numerical("precision not positive definite".into()))?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut total = 0.0;
    for i in 0..x.nrows() {
        let r = x.row(i).transpose() - mu;
        let quad = (omega * &r).dot(&r);
        total += -0.5 * q as f64 * LN_2PI + 0.5 * logdet - 0.5 * quad;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::enumerate_dags;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dag(q: usize, edges: &[(usize, usize)]) -> Dag {
        let e: Vec<_> = edges.iter().map(|&(u, v)| (u - 1, v - 1)).collect();
        Dag::from_edges(q, &e).unwrap()
    }

    fn random_data(n: usize, q: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // correlated columns so that structure matters
        let mut x = DMatrix::from_fn(n, q, |_, _| rng.sample::<f64, _>(StandardNormal));
        for i in 0..n {
            for j in 1..q {
                x[(i, j)] += 0.7 * x[(i, j - 1)];
            }
        }
        x
    }

    fn random_spd(q: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose() + DMatrix::identity(q, q) * 0.5
    }

    #[test]
    fn reparameterize_identity() {
        let d = dag(3, &[(1, 2), (3, 2)]);
        let nodes = reparameterize(&DVector::zeros(3), &DMatrix::identity(3, 3), &d).unwrap();
        for node in &nodes {
            assert_eq!(node.d, 1.0);
            assert!(node.l_col.iter().all(|&l| l == 0.0));
            assert_eq!(node.eta, 0.0);
        }
    }

    #[test]
    fn reparameterize_two_by_two() {
        let d = dag(2, &[(2, 1)]);
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let nodes = reparameterize(&DVector::zeros(2), &sigma, &d).unwrap();
        assert!((nodes[0].d - 1.0).abs() < 1e-14);
        assert!((nodes[0].l_col[0] + 1.0).abs() < 1e-14);
        assert_eq!(nodes[0].eta, 0.0);
        assert!((nodes[1].d - 1.0).abs() < 1e-14);
    }

    #[test]
    fn assemble_examples() {
        let d = dag(2, &[]);
        let nodes = vec![
            NodeParams { eta: 0.0, l_col: DVector::zeros(0), d: 2.0 },
            NodeParams { eta: 0.0, l_col: DVector::zeros(0), d: 4.0 },
        ];
        let omega = assemble_precision(&d, &nodes).unwrap();
        assert_eq!(omega, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25]));

        let d = dag(2, &[(2, 1)]);
        let nodes = vec![
            NodeParams { eta: 0.0, l_col: DVector::from_element(1, -1.0), d: 1.0 },
            NodeParams { eta: 0.0, l_col: DVector::zeros(0), d: 1.0 },
        ];
        let omega = assemble_precision(&d, &nodes).unwrap();
        assert_eq!(omega, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 2.0]));

        let bad = vec![
            NodeParams { eta: 0.0, l_col: DVector::from_element(1, -1.0), d: 0.0 },
            NodeParams { eta: 0.0, l_col: DVector::zeros(0), d: 1.0 },
        ];
        assert!(assemble_precision(&d, &bad).is_err());
    }

    #[test]
    fn precision_zero_pattern_follows_moral_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = Hyperparams::default_for(5);
        for d in [dag(5, &[(1, 2), (3, 2), (4, 5)]), dag(5, &[(1, 2), (2, 3), (3, 4), (4, 5)])] {
            let c = sample_cluster_params(&d, &h, &mut rng).unwrap();
            for u in 0..5 {
                for v in 0..5 {
                    if u == v || d.has_edge(u, v) || d.has_edge(v, u) {
                        continue;
                    }
                    let common_child = (0..5).any(|c| d.has_edge(u, c) && d.has_edge(v, c));
                    if !common_child {
                        assert!(c.omega()[(u, v)].abs() < 1e-14, "{d:?} ({u},{v})");
                    }
                }
            }
        }
    }

    #[test]
    fn reparameterize_round_trip_on_markov_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = Hyperparams::default_for(4);
        for d in enumerate_dags(4).unwrap().into_iter().step_by(17) {
            let c = sample_cluster_params(&d, &h, &mut rng).unwrap();
            let sigma = c.omega().clone().try_inverse().unwrap();
            let nodes = reparameterize(c.mu(), &sigma, &d).unwrap();
            let omega = assemble_precision(&d, &nodes).unwrap();
            assert!((&omega - c.omega()).amax() < 1e-10);
            for (a, b) in nodes.iter().zip(c.nodes()) {
                assert!((a.eta - b.eta).abs() < 1e-9);
                assert!((a.d - b.d).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn reparameterize_reports_singular_block() {
        let d = dag(3, &[(2, 1), (3, 1)]);
        let sigma = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(reparameterize(&DVector::zeros(3), &sigma, &d), Err(Error::NotPositiveDefinite { node: 0 }));
    }

    #[test]
    fn suff_stats_examples() {
        let x = DMatrix::from_row_slice(1, 2, &[1.5, -2.0]);
        let s = suff_stats(&x, &DVector::zeros(2)).unwrap();
        assert_eq!(s.xbar, DVector::from_vec(vec![1.5, -2.0]));
        assert_eq!(s.s, DMatrix::zeros(2, 2));
        assert_eq!(s.s0, DMatrix::from_row_slice(2, 2, &[2.25, -3.0, -3.0, 4.0]));

        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, -2.0]);
        let s = suff_stats(&x, &DVector::zeros(2)).unwrap();
        assert_eq!(s.xbar, DVector::zeros(2));
        assert_eq!(s.s, DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 4.0, 8.0]));
        assert_eq!(s.s0, DMatrix::zeros(2, 2));

        let x = DMatrix::from_row_slice(3, 2, &[3.0, 1.0, 3.0, 2.0, 3.0, 5.0]);
        let s = suff_stats(&x, &DVector::zeros(2)).unwrap();
        assert_eq!(s.s[(0, 0)], 0.0);

        assert!(suff_stats(&DMatrix::zeros(0, 2), &DVector::zeros(2)).is_err());
    }

    #[test]
    fn posterior_hyperparams_examples() {
        let h = Hyperparams::default_for(2);
        let empty = SuffStats::from_rows(&DMatrix::zeros(0, 2), None, &h.m);
        assert_eq!(posterior_hyperparams(&h, &empty), h);

        let x = DMatrix::from_row_slice(1, 2, &[2.0, -4.0]);
        let post = posterior_hyperparams(&h, &suff_stats(&x, &h.m).unwrap());
        assert_eq!(post.a_mu, 2.0);
        assert_eq!(post.a_omega, 3.0);
        assert_eq!(post.m, DVector::from_vec(vec![1.0, -2.0]));
        let xv = DVector::from_vec(vec![2.0, -4.0]);
        let expected = DMatrix::identity(2, 2) + &xv * xv.transpose() * 0.5;
        assert!((&post.u - expected).amax() < 1e-14);
    }

    #[test]
    fn sequential_update_equals_batch() {
        let x = random_data(12, 3, 9);
        let h = Hyperparams::new(
            2.0,
            DVector::from_vec(vec![0.5, -1.0, 0.0]),
            4.5,
            DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 1.5]),
        )
        .unwrap();
        let batch = posterior_hyperparams(&h, &suff_stats(&x, &h.m).unwrap());
        let mut seq = h.clone();
        for i in 0..x.nrows() {
            let row = x.rows(i, 1).into_owned();
            seq = posterior_hyperparams(&seq, &suff_stats(&row, &seq.m).unwrap());
        }
        assert!((seq.a_mu - batch.a_mu).abs() < 1e-10);
        assert!((seq.a_omega - batch.a_omega).abs() < 1e-10);
        assert!((&seq.m - &batch.m).amax() < 1e-10);
        assert!((&seq.u - &batch.u).amax() < 1e-10);
    }

    #[test]
    fn hyperparams_validation() {
        let q = 2;
        assert!(Hyperparams::new(0.0, DVector::zeros(q), 2.0, DMatrix::identity(q, q)).is_err());
        assert!(Hyperparams::new(1.0, DVector::zeros(q), 1.0, DMatrix::identity(q, q)).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(Hyperparams::new(1.0, DVector::zeros(q), 2.0, asym).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(Hyperparams::new(1.0, DVector::zeros(q), 2.0, indefinite).is_err());
        assert!(Hyperparams::new(1.0, DVector::zeros(q), 1.5, DMatrix::identity(q, q)).is_ok());
    }

    #[test]
    fn empty_parent_set_prior_draw() {
        // d ~ IG((a_omega - q + 1)/2, U_jj/2): mean of 1/d is (a_omega - q + 1)/U_jj
        let h = Hyperparams::new(2.0, DVector::from_vec(vec![1.0, 3.0]), 4.0, DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]))
            .unwrap();
        let d = dag(2, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws = 100_000;
        let (mut prec, mut eta) = (0.0, 0.0);
        for _ in 0..draws {
            let p = sample_node_params(&d, 1, &h, &mut rng).unwrap();
            assert!(p.l_col.is_empty());
            prec += 1.0 / p.d;
            eta += p.eta;
        }
        let prec = prec / draws as f64;
        let eta = eta / draws as f64;
        assert!((prec - 3.0 / 1.0).abs() < 0.05, "{prec}");
        assert!((eta - 3.0).abs() < 0.05, "{eta}");
    }

    #[test]
    fn monte_carlo_moments_of_node_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = random_spd(3, &mut rng);
        let h = Hyperparams::new(1.5, DVector::from_vec(vec![0.2, -0.4, 1.0]), 5.0, u.clone()).unwrap();
        let d = dag(3, &[(2, 1), (3, 1)]);
        let pa = [1usize, 2];
        let upa = sub_matrix(&u, &pa);
        let upa_inv = upa.clone().try_inverse().unwrap();
        let cross = DVector::from_vec(vec![u[(1, 0)], u[(2, 0)]]);
        let mean_l = -(&upa_inv * &cross);
        let cond = u[(0, 0)] - cross.dot(&(&upa_inv * &cross));
        let shape = h.node_shape(2);

        let draws = 100_000;
        let mut l_sum = DVector::zeros(2);
        let mut l_sq = DVector::zeros(2);
        let mut prec_sum = 0.0;
        let mut prec_sq = 0.0;
        for _ in 0..draws {
            let p = sample_node_params(&d, 0, &h, &mut rng).unwrap();
            l_sum += &p.l_col;
            l_sq += p.l_col.component_mul(&p.l_col);
            prec_sum += 1.0 / p.d;
            prec_sq += 1.0 / (p.d * p.d);
        }
        let nd = draws as f64;
        for k in 0..2 {
            let mean = l_sum[k] / nd;
            let se = ((l_sq[k] / nd - mean * mean) / nd).sqrt();
            assert!((mean - mean_l[k]).abs() < 3.0 * se + 1e-12, "coef {k}: {mean} vs {}", mean_l[k]);
        }
        let mean = prec_sum / nd;
        let se = ((prec_sq / nd - mean * mean) / nd).sqrt();
        assert!((mean - shape / cond).abs() < 3.0 * se, "{mean} vs {}", shape / cond);
    }

    #[test]
    fn node_draws_are_independent_across_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = Hyperparams::default_for(3);
        let d = dag(3, &[(2, 1), (3, 2)]);
        let draws = 50_000;
        let mut a = Vec::with_capacity(draws);
        let mut b = Vec::with_capacity(draws);
        for _ in 0..draws {
            let c = sample_cluster_params(&d, &h, &mut rng).unwrap();
            a.push(c.nodes()[0].l_col[0]);
            b.push(c.nodes()[1].l_col[0]);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / draws as f64;
        let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / draws as f64).sqrt();
        let sb = (b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / draws as f64).sqrt();
        let corr = cov / (sa * sb);
        // heavy tails inflate the sampling error of a raw correlation; use a loose band
        assert!(corr.abs() < 4.0 / (draws as f64).sqrt() * 3.0, "corr {corr}");
    }

    #[test]
    fn marginal_with_no_data_is_zero() {
        let h = Hyperparams::default_for(2);
        let x = DMatrix::zeros(0, 2);
        assert_eq!(NodeScorer::from_rows(&h, &x, None).log_marginal(0, &[1]).unwrap(), 0.0);
        assert_eq!(log_marginal_dag(&x, &dag(2, &[(1, 2)]), &h).unwrap(), 0.0);
    }

    #[test]
    fn score_equivalence_two_nodes() {
        let x = random_data(10, 2, 21);
        let h = Hyperparams::default_for(2);
        let a = log_marginal_node(&x, 0, &[1], &h).unwrap() + log_marginal_node(&x, 1, &[], &h).unwrap();
        let b = log_marginal_node(&x, 1, &[0], &h).unwrap() + log_marginal_node(&x, 0, &[], &h).unwrap();
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn score_equivalence_over_all_three_node_dags() {
        let x = random_data(15, 3, 22);
        let h = Hyperparams::new(
            1.0,
            DVector::from_vec(vec![0.1, 0.0, -0.2]),
            3.5,
            DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 1.5, 0.3, 0.0, 0.3, 0.8]),
        )
        .unwrap();
        let dags = enumerate_dags(3).unwrap();
        let scores: Vec<f64> = dags.iter().map(|d| log_marginal_dag(&x, d, &h).unwrap()).collect();
        let mut classes = 0;
        for i in 0..dags.len() {
            for j in 0..dags.len() {
                if dags[i].markov_equivalent(&dags[j]) {
                    assert!((scores[i] - scores[j]).abs() < 1e-8);
                } else if i < j {
                    assert!((scores[i] - scores[j]).abs() > 1e-8);
                }
            }
            if (0..i).all(|k| !dags[k].markov_equivalent(&dags[i])) {
                classes += 1;
            }
        }
        assert_eq!(classes, 11);

        let complete_a = Dag::complete(3).unwrap();
        let complete_b = dag(3, &[(1, 2), (1, 3), (2, 3)]);
        assert!((log_marginal_dag(&x, &complete_a, &h).unwrap() - log_marginal_dag(&x, &complete_b, &h).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn likelihood_examples() {
        let q = 3;
        let d = dag(q, &[]);
        let nodes = (0..q).map(|j| NodeParams { eta: j as f64, l_col: DVector::zeros(0), d: 1.0 }).collect();
        let c = ClusterParams::new(d, nodes).unwrap();
        let x = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 2.0]);
        assert!((log_likelihood(&x, &c) + 1.5 * LN_2PI).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let d = dag(4, &[(1, 2), (3, 2), (2, 4)]);
        let c = sample_cluster_params(&d, &Hyperparams::default_for(4), &mut rng).unwrap();
        let x = random_data(7, 4, 32);
        let dense = dense_gaussian_log_density(&x, c.mu(), c.omega()).unwrap();
        assert!((log_likelihood(&x, &c) - dense).abs() < 1e-10 * dense.abs().max(1.0));

        let one = x.rows(0, 1).into_owned();
        let two = DMatrix::from_fn(2, 4, |_, j| x[(0, j)]);
        assert!((log_likelihood(&two, &c) - 2.0 * log_likelihood(&one, &c)).abs() < 1e-12);
    }

    #[test]
    fn cluster_params_validation() {
        let d = dag(2, &[(1, 2)]);
        let bad_len = vec![
            NodeParams { eta: 0.0, l_col: DVector::zeros(0), d: 1.0 },
            NodeParams { eta: 0.0, l_col: DVector::zeros(0), d: 1.0 },
        ];
        assert!(ClusterParams::new(d.clone(), bad_len).is_err());
        let bad_d = vec![
            NodeParams { eta: 0.0, l_col: DVector::zeros(0), d: -1.0 },
            NodeParams { eta: 0.0, l_col: DVector::zeros(1), d: 1.0 },
        ];
        assert!(ClusterParams::new(d, bad_d).is_err());
    }
}
