//! Partial-analytic-structure update of one mixture component: a
//! Metropolis-Hastings move on the DAG with the node parameters integrated
//! out, followed by an exact draw of the parameters given the accepted DAG.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Dag, DagOperator, DagPrior, ProposalRatio};
use crate::wishart::{sample_cluster_params, ClusterParams, NodeScorer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PasSettings {
    pub dag_prior: DagPrior,
    pub proposal: ProposalRatio,
}

/// Outcome of one DAG proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct PasMove {
    pub proposed_dag: Dag,
    pub operator: DagOperator,
    pub log_accept_ratio: f64,
    pub accepted: bool,
    /// A marginal-likelihood term could not be evaluated; the move was rejected.
    pub numerical_failure: bool,
}

fn local_log_marginal(scorer: &NodeScorer, dag: &Dag, op: &DagOperator) -> Result<f64> {
    let (nodes, count) = op.changed_nodes();
    nodes[..count].iter().map(|&j| scorer.log_marginal(j, &dag.parents_of(j))).sum()
}

/// Proposes a uniformly chosen operator from `O_D` and accepts it with
/// probability `min(1, r)`, where `r` multiplies the marginal-likelihood ratio
/// of the nodes whose parent sets change, the structure-prior ratio and the
/// proposal ratio.
pub fn pas_dag_step<R: Rng + ?Sized>(
    current: &Dag,
    scorer: &NodeScorer,
    settings: &PasSettings,
    rng: &mut R,
) -> Result<PasMove> {
    let ops = current.enumerate_operators();
    if ops.is_empty() {
        return Err(Error::InvalidInput("no valid DAG operators (single-node graph)".into()));
    }
    let operator = ops[rng.random_range(0..ops.len())];
    let proposed_dag = current.apply(&operator)?;

    let marginal = local_log_marginal(scorer, &proposed_dag, &operator)
        .and_then(|new| local_log_marginal(scorer, current, &operator).map(|old| new - old));
    let log_accept_ratio = match marginal {
        Ok(delta) => {
            delta + settings.dag_prior.log_prob(&proposed_dag) - settings.dag_prior.log_prob(current)
                + settings.proposal.log_ratio(ops.len(), &proposed_dag)
        }
        Err(_) => {
            return Ok(PasMove {
                proposed_dag,
                operator,
                log_accept_ratio: f64::NEG_INFINITY,
                accepted: false,
                numerical_failure: true,
            })
        }
    };
    let accepted = log_accept_ratio >= 0.0 || rng.random::<f64>().ln() < log_accept_ratio;
    Ok(PasMove { proposed_dag, operator, log_accept_ratio, accepted, numerical_failure: false })
}

/// Draws `(D, L, eta)` given the DAG from the posterior held by `scorer`.
pub fn refresh_params<R: Rng + ?Sized>(dag: &Dag, scorer: &NodeScorer, rng: &mut R) -> Result<ClusterParams> {
    sample_cluster_params(dag, scorer.posterior(), rng)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PasCounts {
    pub proposed: usize,
    pub accepted: usize,
    pub numerical_failures: usize,
}

/// `moves` DAG proposals followed by a parameter refresh.
pub fn pas_update<R: Rng + ?Sized>(
    dag: &Dag,
    scorer: &NodeScorer,
    settings: &PasSettings,
    moves: usize,
    rng: &mut R,
) -> Result<(ClusterParams, PasCounts)> {
    let mut current = dag.clone();
    let mut counts = PasCounts::default();
    if current.q() > 1 {
        for _ in 0..moves {
            let mv = pas_dag_step(&current, scorer, settings, rng)?;
            counts.proposed += 1;
            counts.numerical_failures += usize::from(mv.numerical_failure);
            if mv.accepted {
                counts.accepted += 1;
                current = mv.proposed_dag;
            }
        }
    }
    let params = refresh_params(&current, scorer, rng)?;
    Ok((params, counts))
}
