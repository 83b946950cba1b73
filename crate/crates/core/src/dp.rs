//! Slice sampler for the Dirichlet-process mixture of Gaussian DAG models.
//!
//! A sweep updates, in order: slice variables and sticks, allocations,
//! component parameters (DAG and node parameters) and the DP precision.
//! Labels are stick indices and are never permuted inside the chain.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};

use crate::error::{Error, Result};
use crate::graph::{sample_dag_prior, Dag, DagPrior, ProposalRatio};
use crate::pas::{pas_update, PasCounts, PasSettings};
use crate::wishart::{sample_cluster_params, ClusterParams, Hyperparams, NodeScorer};

/// `alpha0 ~ Gamma(c, d)` (shape, rate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaPrior {
    pub c: f64,
    pub d: f64,
}

impl Default for AlphaPrior {
    fn default() -> Self {
        Self { c: 3.0, d: 1.0 }
    }
}

/// How subjects are assigned to components.
#[derive(Debug, Clone, PartialEq)]
pub enum Allocation {
    /// Full DP mixture.
    Dirichlet,
    /// Allocations pinned to the given 0-indexed contiguous labels; only the
    /// component parameters are updated. One label for everyone gives the
    /// single-model benchmark, the true labels give the oracle benchmark.
    Fixed(Vec<usize>),
}

/// Starting allocation of a DP chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialPartition {
    /// Everyone in one component.
    SingleCluster,
    /// A Chinese-restaurant draw with `alpha0 = c / d`.
    #[default]
    PriorDraw,
}

/// Labels `0..K` in order of first appearance, from the Chinese restaurant
/// process with precision `alpha0`.
pub fn chinese_restaurant<R: Rng + ?Sized>(n: usize, alpha0: f64, rng: &mut R) -> Vec<usize> {
    let mut sizes: Vec<usize> = Vec::new();
    let mut xi = Vec::with_capacity(n);
    for i in 0..n {
        let mut u = rng.random::<f64>() * (i as f64 + alpha0);
        let mut label = sizes.len();
        for (k, &m) in sizes.iter().enumerate() {
            u -= m as f64;
            if u < 0.0 {
                label = k;
                break;
            }
        }
        if label == sizes.len() {
            sizes.push(0);
        }
        sizes[label] += 1;
        xi.push(label);
    }
    xi
}

/// Everything the sampler needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub hyper: Hyperparams,
    pub dag_prior: DagPrior,
    pub alpha_prior: AlphaPrior,
    pub proposal: ProposalRatio,
    pub dag_moves_per_sweep: usize,
    /// Metropolis-Hastings steps used to draw a DAG from the structure prior.
    pub prior_dag_steps: usize,
    /// Maximum number of represented sticks; `None` uses `10 ceil(alpha0 ln n) + 50`.
    pub stick_cap: Option<usize>,
    /// Keep `alpha0` fixed at its initial value.
    pub fix_alpha0: bool,
    /// Replace every component likelihood by a constant (prior-only checks).
    pub flat_likelihood: bool,
    pub init: InitialPartition,
}

impl ModelSpec {
    pub fn default_for(q: usize) -> Self {
        Self {
            hyper: Hyperparams::default_for(q),
            dag_prior: DagPrior::sparse(q),
            alpha_prior: AlphaPrior::default(),
            proposal: ProposalRatio::Exact,
            dag_moves_per_sweep: 1,
            prior_dag_steps: 2 * q * q,
            stick_cap: None,
            fix_alpha0: false,
            flat_likelihood: false,
            init: InitialPartition::default(),
        }
    }

    pub fn q(&self) -> usize {
        self.hyper.q()
    }

    fn pas_settings(&self) -> PasSettings {
        PasSettings { dag_prior: self.dag_prior, proposal: self.proposal }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha_prior.c > 0.0 && self.alpha_prior.d > 0.0) {
            return Err(Error::InvalidInput("alpha0 prior needs c, d > 0".into()));
        }
        if self.prior_dag_steps == 0 {
            return Err(Error::InvalidInput("prior_dag_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// A component drawn from the baseline measure.
    pub fn draw_from_baseline<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ClusterParams> {
        let dag = sample_dag_prior(self.q(), self.prior_dag_steps, &self.dag_prior, self.proposal, rng)?;
        sample_cluster_params(&dag, &self.hyper, rng)
    }
}

/// Sampler state. Labels in `xi` are 0-indexed stick positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub xi: Vec<usize>,
    pub sticks: Vec<f64>,
    pub weights: Vec<f64>,
    pub slices: Vec<f64>,
    pub clusters: Vec<ClusterParams>,
    pub alpha0: f64,
}

impl ChainState {
    /// Number of labels in use, `max xi + 1`.
    pub fn k_active(&self) -> usize {
        self.xi.iter().max().map_or(0, |&k| k + 1)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k_active()];
        for &k in &self.xi {
            sizes[k] += 1;
        }
        sizes
    }

    /// Number of non-empty components.
    pub fn occupied(&self) -> usize {
        self.cluster_sizes().iter().filter(|&&s| s > 0).count()
    }

    fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.k_active()];
        for (i, &k) in self.xi.iter().enumerate() {
            members[k].push(i);
        }
        members
    }
}

/// `omega_k = v_k prod_{h<k} (1 - v_h)`.
pub fn stick_weights(sticks: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = sticks.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::InvalidInput(format!("stick {v} outside (0, 1)")));
    }
    Ok(weights_unchecked(sticks))
}

fn weights_unchecked(sticks: &[f64]) -> Vec<f64> {
    let mut rest = 1.0;
    sticks
        .iter()
        .map(|&v| {
            let w = v * rest;
            rest *= 1.0 - v;
            w
        })
        .collect()
}

fn clamp_stick(v: f64) -> f64 {
    v.clamp(f64::MIN_POSITIVE, 1.0 - 1e-12)
}

fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let d = Beta::new(a, b).map_err(|e| Error::Numerical(format!("Beta({a}, {b}): {e}")))?;
    Ok(d.sample(rng))
}

/// Mixing weight `g` of the `Gamma(c + K, d - ln eta)` component.
pub fn alpha0_mixture_weight(k: usize, n: usize, prior: &AlphaPrior, eta: f64) -> f64 {
    let odds = (prior.c + k as f64 - 1.0) / (n as f64 * (prior.d - eta.ln()));
    odds / (1.0 + odds)
}

/// One auxiliary-variable update of the DP precision given `k` occupied
/// components among `n` subjects.
pub fn alpha0_step<R: Rng + ?Sized>(alpha0: f64, k: usize, n: usize, prior: &AlphaPrior, rng: &mut R) -> Result<f64> {
    if k == 0 || n == 0 {
        return Err(Error::InvalidInput("alpha0 update needs n >= 1 and K >= 1".into()));
    }
    let eta = beta(alpha0 + 1.0, n as f64, rng)?.max(f64::MIN_POSITIVE);
    let rate = prior.d - eta.ln();
    let g = alpha0_mixture_weight(k, n, prior, eta);
    let shape = if rng.random::<f64>() < g { prior.c + k as f64 } else { prior.c + k as f64 - 1.0 };
    let draw = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numerical(format!("Gamma({shape}, {rate}): {e}")))?
        .sample(rng);
    Ok(draw.max(f64::MIN_POSITIVE))
}

/// Counters accumulated over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepCounts {
    pub pas: PasCounts,
    /// Component updates abandoned after a numerical failure.
    pub failed_cluster_updates: usize,
    pub baseline_draws: usize,
}

/// The sweep operators, bound to one dataset and model.
pub struct SliceSampler<'a> {
    x: &'a DMatrix<f64>,
    model: &'a ModelSpec,
    pub counts: SweepCounts,
}

impl<'a> SliceSampler<'a> {
    pub fn new(x: &'a DMatrix<f64>, model: &'a ModelSpec) -> Result<Self> {
        model.validate()?;
        if x.nrows() == 0 {
            return Err(Error::InvalidInput("no observations".into()));
        }
        if x.ncols() != model.q() {
            return Err(Error::InvalidInput(format!(
                "data have {} columns but the model has q = {}",
                x.ncols(),
                model.q()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("data contain non-finite entries".into()));
        }
        Ok(Self { x, model, counts: SweepCounts::default() })
    }

    /// Initial labels per `ModelSpec::init`; each initial component's
    /// parameters are drawn from the posterior given its rows under the empty
    /// DAG; `alpha0 = c / d`.
    pub fn initial_state<R: Rng + ?Sized>(&self, allocation: &Allocation, rng: &mut R) -> Result<ChainState> {
        let n = self.x.nrows();
        let alpha0 = self.model.alpha_prior.c / self.model.alpha_prior.d;
        let xi = match allocation {
            Allocation::Dirichlet => match self.model.init {
                InitialPartition::SingleCluster => vec![0; n],
                InitialPartition::PriorDraw => chinese_restaurant(n, alpha0, rng),
            },
            Allocation::Fixed(labels) => {
                if labels.len() != n {
                    return Err(Error::InvalidInput(format!("{} fixed labels for {n} rows", labels.len())));
                }
                let k = labels.iter().max().map_or(0, |&m| m + 1);
                let mut seen = vec![false; k];
                labels.iter().for_each(|&l| seen[l] = true);
                if seen.iter().any(|s| !s) {
                    return Err(Error::InvalidInput("fixed labels must be contiguous from 1".into()));
                }
                labels.clone()
            }
        };
        let empty = Dag::empty(self.model.q())?;
        let mut state = ChainState {
            xi,
            sticks: Vec::new(),
            weights: Vec::new(),
            slices: vec![0.0; n],
            clusters: Vec::new(),
            alpha0,
        };
        for rows in state.members() {
            let scorer = NodeScorer::from_rows(&self.model.hyper, self.x, Some(&rows));
            state.clusters.push(sample_cluster_params(&empty, scorer.posterior(), rng)?);
        }
        Ok(state)
    }

    fn stick_cap(&self, alpha0: f64) -> usize {
        self.model.stick_cap.unwrap_or_else(|| {
            let n = self.x.nrows() as f64;
            10 * (alpha0 * n.ln()).ceil().max(0.0) as usize + 50
        })
    }

    /// Fresh sticks for the occupied range, fresh slices, then stick extension
    /// (with baseline draws for new components) until the leftover mass falls
    /// below the smallest slice.
    pub fn update_slices_and_sticks<R: Rng + ?Sized>(&mut self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let k_active = state.k_active();
        let sizes = state.cluster_sizes();
        let mut after = 0usize;
        let mut sticks = vec![0.0; k_active];
        for k in (0..k_active).rev() {
            sticks[k] = clamp_stick(beta(sizes[k] as f64 + 1.0, state.alpha0 + after as f64, rng)?);
            after += sizes[k];
        }
        state.sticks = sticks;
        state.clusters.truncate(k_active);
        state.weights = weights_unchecked(&state.sticks);

        let mut min_slice = f64::INFINITY;
        for (i, &k) in state.xi.iter().enumerate() {
            let w = state.weights[k];
            let mut u = 0.0;
            while u <= 0.0 {
                u = rng.random::<f64>() * w;
            }
            state.slices[i] = u;
            min_slice = min_slice.min(u);
        }

        let cap = self.stick_cap(state.alpha0);
        let mut rest: f64 = state.sticks.iter().map(|v| 1.0 - v).product();
        while rest >= min_slice {
            if state.sticks.len() >= cap {
                return Err(Error::StickCapExceeded { cap });
            }
            let v = clamp_stick(beta(1.0, state.alpha0, rng)?);
            state.sticks.push(v);
            state.weights.push(v * rest);
            rest *= 1.0 - v;
            state.clusters.push(self.model.draw_from_baseline(rng)?);
            self.counts.baseline_draws += 1;
        }
        Ok(())
    }

    /// Draws each label from the components whose weight exceeds its slice,
    /// with probability proportional to the component likelihood.
    pub fn update_allocations<R: Rng + ?Sized>(&mut self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let mut logw = Vec::with_capacity(state.clusters.len());
        let mut idx = Vec::with_capacity(state.clusters.len());
        for i in 0..state.xi.len() {
            logw.clear();
            idx.clear();
            for (k, &w) in state.weights.iter().enumerate() {
                if w > state.slices[i] {
                    idx.push(k);
                    logw.push(if self.model.flat_likelihood {
                        0.0
                    } else {
                        state.clusters[k].row_log_density(self.x, i)
                    });
                }
            }
            if idx.is_empty() {
                return Err(Error::Invariant(format!("subject {} has no candidate component", i + 1)));
            }
            state.xi[i] = idx[sample_log_categorical(&logw, rng)];
        }
        Ok(())
    }

    /// PAS update for occupied components, baseline redraw for empty ones
    /// below `k_active`.
    pub fn update_cluster_params<R: Rng + ?Sized>(&mut self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        let settings = self.model.pas_settings();
        for (k, rows) in state.members().into_iter().enumerate() {
            if rows.is_empty() {
                state.clusters[k] = self.model.draw_from_baseline(rng)?;
                self.counts.baseline_draws += 1;
                continue;
            }
            if self.model.flat_likelihood {
                continue;
            }
            let scorer = NodeScorer::from_rows(&self.model.hyper, self.x, Some(&rows));
            match pas_update(state.clusters[k].dag(), &scorer, &settings, self.model.dag_moves_per_sweep, rng) {
                Ok((params, counts)) => {
                    state.clusters[k] = params;
                    self.counts.pas.proposed += counts.proposed;
                    self.counts.pas.accepted += counts.accepted;
                    self.counts.pas.numerical_failures += counts.numerical_failures;
                }
                Err(Error::NotPositiveDefinite { .. }) | Err(Error::Numerical(_)) => {
                    self.counts.failed_cluster_updates += 1;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn update_alpha0<R: Rng + ?Sized>(&mut self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        if self.model.fix_alpha0 {
            return Ok(());
        }
        state.alpha0 = alpha0_step(state.alpha0, state.occupied(), state.xi.len(), &self.model.alpha_prior, rng)?;
        Ok(())
    }

    pub fn sweep<R: Rng + ?Sized>(&mut self, state: &mut ChainState, allocation: &Allocation, rng: &mut R) -> Result<()> {
        match allocation {
            Allocation::Dirichlet => {
                self.update_slices_and_sticks(state, rng)?;
                self.update_allocations(state, rng)?;
                self.update_cluster_params(state, rng)?;
                self.update_alpha0(state, rng)
            }
            Allocation::Fixed(_) => self.update_cluster_params(state, rng),
        }
    }
}

/// Index drawn with probability proportional to `exp(logw)`.
pub fn sample_log_categorical<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> usize {
    if logw.len() == 1 {
        return 0;
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return rng.random_range(0..logw.len());
    }
    let total: f64 = logw.iter().map(|l| (l - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (k, l) in logw.iter().enumerate() {
        u -= (l - max).exp();
        if u < 0.0 {
            return k;
        }
    }
    logw.len() - 1
}

/// What a recorded iteration keeps of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSnapshot {
    pub dag: Dag,
    pub mu: DVector<f64>,
    pub omega: DMatrix<f64>,
}

impl From<&ClusterParams> for ClusterSnapshot {
    fn from(c: &ClusterParams) -> Self {
        Self { dag: c.dag().clone(), mu: c.mu().clone(), omega: c.omega().clone() }
    }
}

/// One retained iteration. `clusters` covers labels `0..k_active`.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub xi: Vec<usize>,
    pub clusters: Vec<ClusterSnapshot>,
    pub alpha0: f64,
    pub k_active: usize,
}

impl Draw {
    fn capture(iteration: usize, state: &ChainState) -> Self {
        let k_active = state.k_active();
        Self {
            iteration,
            xi: state.xi.clone(),
            clusters: state.clusters[..k_active].iter().map(ClusterSnapshot::from).collect(),
            alpha0: state.alpha0,
            k_active,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub draws: Vec<Draw>,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Trace {
    pub fn n_subjects(&self) -> Option<usize> {
        self.draws.first().map(|d| d.xi.len())
    }
}

/// Run length and recording schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidInput("thinning must be at least 1".into()));
        }
        if self.iterations < self.burn_in {
            return Err(Error::InvalidInput(format!(
                "burn-in {} exceeds the number of iterations {}",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    /// Whether 1-based iteration `t` is retained.
    pub fn keeps(&self, t: usize) -> bool {
        t > self.burn_in && (t - self.burn_in).is_multiple_of(self.thin)
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Runs the chain and hands every retained draw to `sink`.
pub fn run_chain_with<R, F>(
    x: &DMatrix<f64>,
    model: &ModelSpec,
    allocation: &Allocation,
    schedule: &Schedule,
    rng: &mut R,
    mut sink: F,
) -> Result<SweepCounts>
where
    R: Rng + ?Sized,
    F: FnMut(Draw),
{
    schedule.validate()?;
    let mut sampler = SliceSampler::new(x, model)?;
    let mut state = sampler.initial_state(allocation, rng)?;
    for t in 1..=schedule.iterations {
        sampler
            .sweep(&mut state, allocation, rng)
            .map_err(|e| Error::AtIteration { iteration: t, source: Box::new(e) })?;
        if schedule.keeps(t) {
            sink(Draw::capture(t, &state));
        }
    }
    Ok(sampler.counts)
}

pub fn run_chain<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    model: &ModelSpec,
    allocation: &Allocation,
    schedule: &Schedule,
    rng: &mut R,
) -> Result<Trace> {
    let mut draws = Vec::with_capacity(schedule.retained());
    run_chain_with(x, model, allocation, schedule, rng, |d| draws.push(d))?;
    Ok(Trace { draws, iterations: schedule.iterations, burn_in: schedule.burn_in, thin: schedule.thin })
}
