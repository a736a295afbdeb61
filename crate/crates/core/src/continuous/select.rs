use crate::model::{BidId, Direction, Network};
use crate::optimize::{Backend, LinearProgram, RowBound, Sense, SolveStatus, SolverError, VarId};
use crate::powerflow::OverloadPolicy;

use super::book::QTY_EPS;

/// A resident request that may absorb a block sub-offer.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub bid: BidId,
    pub node: usize,
    pub price: f64,
    pub remaining: f64,
}

/// Everything the selection LP needs about one sub-offer in its period.
#[derive(Debug, Clone)]
pub struct SelectionInput<'a> {
    pub network: &'a Network,
    pub injection: &'a [f64],
    pub flows: &'a [f64],
    pub block_node: usize,
    pub direction: Direction,
    pub quantity: f64,
    pub price: f64,
    pub policy: OverloadPolicy,
}

pub struct SelectionLp {
    pub lp: LinearProgram,
    pub request_vars: Vec<VarId>,
    pub angle_vars: Vec<VarId>,
}

/// Builds the cost-minimising candidate selection with angle variables: the full
/// sub-offer quantity is injected at the block node and the chosen requests balance it.
pub fn build_selection_lp(input: &SelectionInput<'_>, candidates: &[Candidate]) -> Option<SelectionLp> {
    let net = input.network;
    let edges = net.line_indices()?;
    let reference = net.reference_index()?;
    let sign = input.direction.offer_sign();
    let mut lp = LinearProgram::new(Sense::Minimize);

    let request_vars: Vec<VarId> = candidates
        .iter()
        .map(|c| {
            let v = lp.add_continuous(format!("p_{}", c.bid.0), 0.0, c.remaining.max(0.0));
            lp.set_objective(v, -c.price);
            v
        })
        .collect();
    lp.objective_offset = input.price * input.quantity;

    let angle_vars: Vec<VarId> = (0..net.num_nodes())
        .map(|n| {
            if n == reference {
                lp.add_continuous(format!("delta_{n}"), 0.0, 0.0)
            } else {
                lp.add_continuous(format!("delta_{n}"), f64::NEG_INFINITY, f64::INFINITY)
            }
        })
        .collect();

    let mut rows: Vec<Vec<(VarId, f64)>> = vec![Vec::new(); net.num_nodes()];
    for (&(a, b), line) in edges.iter().zip(&net.lines) {
        let s = line.susceptance;
        rows[a].push((angle_vars[a], s));
        rows[a].push((angle_vars[b], -s));
        rows[b].push((angle_vars[b], s));
        rows[b].push((angle_vars[a], -s));
    }
    for (c, &v) in candidates.iter().zip(&request_vars) {
        rows[c.node].push((v, sign));
    }
    // The reference row absorbs any residual setpoint imbalance so the rows stay consistent.
    let residual: f64 = input.injection.iter().sum();
    for (n, terms) in rows.into_iter().enumerate() {
        let mut rhs = input.injection[n];
        if n == input.block_node {
            rhs += sign * input.quantity;
        }
        if n == reference {
            rhs -= residual;
        }
        lp.add_constraint(format!("balance_{n}"), terms, RowBound::Eq(rhs));
    }

    for (l, (&(a, b), line)) in edges.iter().zip(&net.lines).enumerate() {
        let cap = match input.policy {
            OverloadPolicy::Reject => line.limit,
            OverloadPolicy::NoWorsen => line.limit.max(input.flows[l].abs()),
        };
        let s = line.susceptance;
        lp.add_constraint(
            format!("line_{l}"),
            vec![(angle_vars[a], s), (angle_vars[b], -s)],
            RowBound::Range(-cap, cap),
        );
    }
    Some(SelectionLp {
        lp,
        request_vars,
        angle_vars,
    })
}

/// Chooses how much of each candidate request absorbs the sub-offer, or `None`
/// when no network-feasible full coverage exists.
pub fn select_block_requests(
    backend: &dyn Backend,
    input: &SelectionInput<'_>,
    candidates: &[Candidate],
) -> Result<Option<Vec<(BidId, f64)>>, SolverError> {
    let available: f64 = candidates.iter().map(|c| c.remaining).sum();
    if available + QTY_EPS < input.quantity {
        return Ok(None);
    }
    let Some(sel) = build_selection_lp(input, candidates) else {
        return Err(SolverError::Malformed("network has unknown line endpoints".into()));
    };
    let res = backend.solve_lp(&sel.lp)?;
    match res.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Ok(None),
        SolveStatus::Unbounded | SolveStatus::IterationLimit => {
            return Err(SolverError::Malformed(format!("selection LP ended with {:?}", res.status)))
        }
    }
    let mut assignment: Vec<(BidId, f64)> = candidates
        .iter()
        .zip(&sel.request_vars)
        .map(|(c, &v)| (c.bid, res.value(v).clamp(0.0, c.remaining)))
        .filter(|&(_, q)| q > QTY_EPS)
        .collect();
    if assignment.is_empty() {
        return Ok(None);
    }
    // Put the rounding residue on the largest share so the shares sum to the sub-offer.
    let big = (0..assignment.len())
        .max_by(|&i, &j| assignment[i].1.total_cmp(&assignment[j].1).then(j.cmp(&i)))
        .unwrap_or(0);
    let others: f64 = assignment.iter().enumerate().filter(|&(i, _)| i != big).map(|(_, a)| a.1).sum();
    assignment[big].1 = input.quantity - others;
    Ok(Some(assignment))
}
