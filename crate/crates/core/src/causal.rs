//! Causal effects of hard interventions in Gaussian DAG models and their
//! model-averaged, subject-specific posterior estimates.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::dp::{Draw, Trace};
use crate::error::{Error, Result};
use crate::graph::Dag;

/// Coefficient of `X_s` when regressing `X_y` on `(X_s, X_pa(s))`, or `None`
/// when `y` is a parent of `s`.
fn adjustment(sigma: &DMatrix<f64>, dag: &Dag, s: usize, y: usize) -> Result<Option<f64>> {
    let q = dag.q();
    if sigma.nrows() != q || sigma.ncols() != q {
        return Err(Error::InvalidInput(format!("covariance must be {q}x{q}")));
    }
    if s >= q || y >= q {
        return Err(Error::NodeOutOfRange { node: s.max(y), q });
    }
    if s == y {
        return Err(Error::InvalidInput("the effect of a node on itself is undefined".into()));
    }
    let parents = dag.parents_of(s);
    if parents.contains(&y) {
        return Ok(None);
    }
    let mut family = Vec::with_capacity(parents.len() + 1);
    family.push(s);
    family.extend(parents);
    let m = family.len();
    let block = DMatrix::from_fn(m, m, |a, b| sigma[(family[a], family[b])]);
    let cross = DVector::from_fn(m, |a, _| sigma[(family[a], y)]);
    let chol = Cholesky::new(block).ok_or(Error::NotPositiveDefinite { node: s })?;
    Ok(Some(chol.solve(&cross)[0]))
}

/// Coefficient of `X_s` in the regression of `X_y` on `fa(s)`; zero when `y`
/// is a parent of `s`.
pub fn causal_effect(sigma: &DMatrix<f64>, dag: &Dag, s: usize, y: usize) -> Result<f64> {
    Ok(adjustment(sigma, dag, s, y)?.unwrap_or(0.0))
}

/// `E(X_y | do(X_s = x_tilde))`.
pub fn post_intervention_mean(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    dag: &Dag,
    s: usize,
    x_tilde: f64,
    y: usize,
) -> Result<f64> {
    if mu.len() != dag.q() {
        return Err(Error::InvalidInput(format!("mean must have length {}", dag.q())));
    }
    let Some(coef) = adjustment(sigma, dag, s, y)? else {
        return Ok(mu[y]);
    };
    // intercept mu_y - coef' mu_fa; the parent terms cancel at their means
    Ok(mu[y] + coef * (x_tilde - mu[s]))
}

/// Subject-by-node matrix of estimated effects on `response`; the response
/// column holds NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalEffectMatrix {
    pub values: DMatrix<f64>,
    pub response: usize,
}

impl CausalEffectMatrix {
    pub fn is_valid(&self, _i: usize, s: usize) -> bool {
        s != self.response
    }

    /// Header `X1..Xq`, one row per subject, empty response column.
    pub fn to_csv(&self) -> String {
        let q = self.values.ncols();
        let mut out = (1..=q).map(|j| format!("X{j}")).collect::<Vec<_>>().join(",");
        out.push('\n');
        for row in self.values.row_iter() {
            let cells: Vec<String> = (0..q)
                .map(|s| if s == self.response { String::new() } else { crate::format_real(row[s]) })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Running sums of per-draw effects, so a chain can be summarised without
/// storing it.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalAccumulator {
    response: usize,
    sums: DMatrix<f64>,
    draws: usize,
}

impl CausalAccumulator {
    pub fn new(n: usize, q: usize, response: usize) -> Result<Self> {
        if response >= q {
            return Err(Error::NodeOutOfRange { node: response, q });
        }
        Ok(Self { response, sums: DMatrix::zeros(n, q), draws: 0 })
    }

    pub fn add(&mut self, draw: &Draw) -> Result<()> {
        let (n, q) = self.sums.shape();
        if draw.xi.len() != n {
            return Err(Error::InvalidInput(format!("draw has {} subjects, expected {n}", draw.xi.len())));
        }
        let mut effects = Vec::with_capacity(draw.clusters.len());
        for c in &draw.clusters {
            let sigma = match Cholesky::new(c.omega.clone()) {
                Some(ch) => ch.inverse(),
                None => return Err(Error::Numerical(format!("precision at iteration {} is not positive definite", draw.iteration))),
            };
            let mut row = vec![0.0; q];
            for (s, slot) in row.iter_mut().enumerate() {
                if s != self.response {
                    *slot = causal_effect(&sigma, &c.dag, s, self.response)?;
                }
            }
            effects.push(row);
        }
        for (i, &k) in draw.xi.iter().enumerate() {
            for (s, e) in effects[k].iter().enumerate() {
                self.sums[(i, s)] += e;
            }
        }
        self.draws += 1;
        Ok(())
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn finish(&self) -> Result<CausalEffectMatrix> {
        if self.draws == 0 {
            return Err(Error::InvalidInput("no retained draws".into()));
        }
        let mut values = &self.sums / self.draws as f64;
        values.column_mut(self.response).fill(f64::NAN);
        Ok(CausalEffectMatrix { values, response: self.response })
    }
}

/// Posterior mean over retained draws of each subject's causal effects.
pub fn bma_causal_effects(trace: &Trace, response: usize) -> Result<CausalEffectMatrix> {
    let first = trace.draws.first().ok_or_else(|| Error::InvalidInput("empty trace".into()))?;
    let q = first.clusters.first().map_or(0, |c| c.dag.q());
    let mut acc = CausalAccumulator::new(first.xi.len(), q, response)?;
    for d in &trace.draws {
        acc.add(d)?;
    }
    acc.finish()
}

/// Mean absolute difference over subjects and non-response nodes.
pub fn causal_distance(estimate: &CausalEffectMatrix, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.values.shape() != truth.shape() {
        return Err(Error::InvalidInput("effect matrices differ in shape".into()));
    }
    let (n, q) = truth.shape();
    if q < 2 || n == 0 {
        return Err(Error::InvalidInput("need at least one subject and one non-response node".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        for s in (0..q).filter(|&s| s != estimate.response) {
            total += (estimate.values[(i, s)] - truth[(i, s)]).abs();
        }
    }
    Ok(total / (n * (q - 1)) as f64)
}
