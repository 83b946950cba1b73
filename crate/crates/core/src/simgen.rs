//! Synthetic mixtures of Gaussian DAG models.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::causal::causal_effect;
use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::wishart::{ClusterParams, NodeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DagMode {
    /// One structure shared by all clusters, parameters drawn per cluster.
    EqualDags,
    DifferentDags,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub q: usize,
    pub n_k: usize,
    pub k: usize,
    /// Intercepts are uniform on `[-b, b]`.
    pub b: f64,
    pub edge_prob: f64,
    pub mode: DagMode,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.q < 2 {
            return Err(Error::InvalidInput(format!("scenario needs q >= 2, got {}", self.q)));
        }
        if self.n_k == 0 || self.k == 0 {
            return Err(Error::InvalidInput("scenario needs n_k >= 1 and k >= 1".into()));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::InvalidInput(format!("b must be positive, got {}", self.b)));
        }
        if !(self.edge_prob > 0.0 && self.edge_prob < 1.0) {
            return Err(Error::InvalidInput(format!("edge_prob must lie in (0, 1), got {}", self.edge_prob)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub clusters: Vec<ClusterParams>,
    /// 0-indexed cluster of each row of `x`.
    pub labels: Vec<usize>,
    pub x: DMatrix<f64>,
}

impl GroundTruth {
    /// True causal effect of every node on `response` for every subject;
    /// the response column is NaN.
    pub fn causal_effects(&self, response: usize) -> Result<DMatrix<f64>> {
        let q = self.x.ncols();
        let mut per_cluster = Vec::with_capacity(self.clusters.len());
        for c in &self.clusters {
            let sigma = c
                .omega()
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Numerical("singular true precision".into()))?;
            let mut row = vec![f64::NAN; q];
            for (s, slot) in row.iter_mut().enumerate() {
                if s != response {
                    *slot = causal_effect(&sigma, c.dag(), s, response)?;
                }
            }
            per_cluster.push(row);
        }
        Ok(DMatrix::from_fn(self.labels.len(), q, |i, s| per_cluster[self.labels[i]][s]))
    }
}

/// Random topological order, then each compatible edge independently.
pub fn random_dag<R: Rng + ?Sized>(q: usize, edge_prob: f64, rng: &mut R) -> Result<Dag> {
    let mut order: Vec<usize> = (0..q).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for a in 0..q {
        for b in a + 1..q {
            if rng.random::<f64>() < edge_prob {
                edges.push((order[a], order[b]));
            }
        }
    }
    Dag::from_edges(q, &edges)
}

fn random_params<R: Rng + ?Sized>(dag: Dag, b: f64, rng: &mut R) -> Result<ClusterParams> {
    let nodes = (0..dag.q())
        .map(|j| {
            let k = dag.parents_of(j).len();
            let l_col = DVector::from_fn(k, |_, _| {
                let mag = rng.random_range(0.1..=1.0);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            });
            NodeParams { eta: rng.random_range(-b..=b), l_col, d: 1.0 }
        })
        .collect();
    ClusterParams::new(dag, nodes)
}

/// Draws `n` rows from one component by ancestral sampling.
pub fn sample_rows<R: Rng + ?Sized>(cluster: &ClusterParams, n: usize, rng: &mut R) -> DMatrix<f64> {
    let q = cluster.q();
    let order = cluster.dag().topological_order().expect("component DAGs are acyclic");
    let mut x = DMatrix::zeros(n, q);
    for i in 0..n {
        for &j in &order {
            let node = &cluster.nodes()[j];
            let mut v = node.eta + node.d.sqrt() * rng.sample::<f64, _>(StandardNormal);
            for (p, l) in cluster.dag().parents_of(j).iter().zip(node.l_col.iter()) {
                v -= l * x[(i, *p)];
            }
            x[(i, j)] = v;
        }
    }
    x
}

pub fn generate<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<GroundTruth> {
    scenario.validate()?;
    let shared = random_dag(scenario.q, scenario.edge_prob, rng)?;
    let mut clusters = Vec::with_capacity(scenario.k);
    for k in 0..scenario.k {
        let dag = match scenario.mode {
            DagMode::EqualDags => shared.clone(),
            DagMode::DifferentDags if k == 0 => shared.clone(),
            DagMode::DifferentDags => random_dag(scenario.q, scenario.edge_prob, rng)?,
        };
        clusters.push(random_params(dag, scenario.b, rng)?);
    }

    let n = scenario.n_k * scenario.k;
    let mut rows: Vec<(usize, DVector<f64>)> = Vec::with_capacity(n);
    for (k, c) in clusters.iter().enumerate() {
        let xk = sample_rows(c, scenario.n_k, rng);
        rows.extend(xk.row_iter().map(|r| (k, r.transpose())));
    }
    rows.shuffle(rng);
    let labels = rows.iter().map(|(k, _)| *k).collect();
    let x = DMatrix::from_fn(n, scenario.q, |i, j| rows[i].1[j]);
    Ok(GroundTruth { clusters, labels, x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scenario(mode: DagMode) -> Scenario {
        Scenario { q: 6, n_k: 50, k: 2, b: 5.0, edge_prob: 0.4, mode }
    }

    #[test]
    fn shapes_and_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = generate(&scenario(DagMode::DifferentDags), &mut rng).unwrap();
        assert_eq!(g.x.shape(), (100, 6));
        assert_eq!(g.labels.iter().filter(|&&l| l == 0).count(), 50);
        assert_eq!(g.labels.iter().filter(|&&l| l == 1).count(), 50);
        // shuffled
        assert!(g.labels.windows(2).any(|w| w[0] != w[1]) && g.labels[..50].contains(&1));
    }

    #[test]
    fn parameter_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let g = generate(&scenario(DagMode::DifferentDags), &mut rng).unwrap();
            for c in &g.clusters {
                for node in c.nodes() {
                    assert!(node.l_col.iter().all(|l| (0.1..=1.0).contains(&l.abs())));
                    assert!(node.eta.abs() <= 5.0);
                    assert_eq!(node.d, 1.0);
                }
                assert!(nalgebra::Cholesky::new(c.omega().clone()).is_some());
            }
        }
    }

    #[test]
    fn equal_dags_share_structure_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = generate(&scenario(DagMode::EqualDags), &mut rng).unwrap();
        assert_eq!(g.clusters[0].dag(), g.clusters[1].dag());
        assert_ne!(g.clusters[0].mu(), g.clusters[1].mu());
    }

    #[test]
    fn tiny_edge_prob_gives_empty_dags() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = Scenario { edge_prob: 1e-12, ..scenario(DagMode::DifferentDags) };
        let g = generate(&s, &mut rng).unwrap();
        assert!(g.clusters.iter().all(|c| c.dag().edge_count() == 0));
    }

    #[test]
    fn invalid_scenarios() {
        let ok = scenario(DagMode::EqualDags);
        assert!(Scenario { b: 0.0, ..ok }.validate().is_err());
        assert!(Scenario { q: 1, ..ok }.validate().is_err());
        assert!(Scenario { edge_prob: 1.0, ..ok }.validate().is_err());
        assert!(Scenario { n_k: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn random_dag_edge_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = 10;
        let reps = 2000;
        let total: usize = (0..reps).map(|_| random_dag(q, 0.1, &mut rng).unwrap().edge_count()).sum();
        let rate = total as f64 / (reps * q * (q - 1) / 2) as f64;
        assert!((rate - 0.1).abs() < 0.005, "{rate}");
    }

    #[test]
    fn sample_covariance_approaches_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dag = random_dag(4, 0.6, &mut rng).unwrap();
        let c = random_params(dag, 2.0, &mut rng).unwrap();
        let sigma = c.omega().clone().try_inverse().unwrap();
        let err = |n: usize, rng: &mut ChaCha8Rng| {
            let x = sample_rows(&c, n, rng);
            let mean = x.row_mean();
            let centred = DMatrix::from_fn(n, 4, |i, j| x[(i, j)] - mean[j]);
            let cov = centred.transpose() * &centred / (n as f64 - 1.0);
            ((&cov - &sigma).norm(), (mean.transpose() - c.mu()).norm())
        };
        let (small, _) = err(100, &mut rng);
        let (large, mean_err) = err(10_000, &mut rng);
        assert!(large < small);
        assert!(large < 0.15 * sigma.norm(), "{large}");
        assert!(mean_err < 0.1);
    }

    #[test]
    fn true_effects_mask_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = generate(&scenario(DagMode::DifferentDags), &mut rng).unwrap();
        let e = g.causal_effects(0).unwrap();
        assert!(e.column(0).iter().all(|v| v.is_nan()));
        assert!(e.columns(1, 5).iter().all(|v| v.is_finite()));
    }
}
