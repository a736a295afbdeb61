//! Auction-based benchmark: all periods cleared at once by one MILP with a binary
//! acceptance ratio per block.
//!
//! Line limits enter through PTDF rows. Rows are added lazily: the MILP is solved
//! with the rows found so far, flows of the solution are checked against every
//! row that could ever bind, and violated ones are added before re-solving.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{BidId, BidSet, BlockId, Direction, MarketOutcome, ModelError, Network, Setpoint, Side, Trade};
use crate::optimize::{
    Backend, EmbeddedSolver, LinearProgram, MilpOptions, RowBound, Sense, SolveResult, SolveStatus, SolverError,
    VarId, VarKind,
};
use crate::powerflow::{PowerflowError, PtdfMatrix};

/// Line rows violated by more than this are added to the active set.
const CUT_TOL: f64 = 1e-7;
const QTY_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuctionError {
    #[error("auction MILP reported infeasible although zero acceptance is feasible")]
    Infeasible,
    #[error("auction MILP hit its node limit (incumbent {incumbent:?}, bound {best_bound})")]
    IterationLimit { incumbent: Option<f64>, best_bound: f64 },
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Powerflow(#[from] PowerflowError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A line-limit row over the auction variables for one period.
#[derive(Debug, Clone, PartialEq)]
pub struct LineCut {
    pub period: usize,
    pub line: usize,
    pub terms: Vec<(VarId, f64)>,
    pub bound: RowBound,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VarMap {
    pub requests: Vec<(BidId, VarId)>,
    pub offers: Vec<(BidId, VarId)>,
    pub blocks: Vec<(BlockId, VarId)>,
}

#[derive(Debug, Clone)]
pub struct AuctionProblem {
    /// Objective, bounds and directional balance rows; line rows live in `cuts`.
    pub lp: LinearProgram,
    pub vars: VarMap,
    pub cuts: Vec<LineCut>,
    pub bids: BidSet,
}

impl AuctionProblem {
    /// The complete MILP with every potentially binding line row.
    pub fn full_program(&self) -> LinearProgram {
        let mut lp = self.lp.clone();
        for c in &self.cuts {
            lp.add_constraint(format!("line_{}_t{}", c.line, c.period), c.terms.clone(), c.bound);
        }
        lp
    }
}

/// Builds the auction MILP. Effective line caps are the thermal limit or the initial
/// flow magnitude where the setpoint already exceeds it.
pub fn build_auction(
    network: &Network,
    ptdf: &PtdfMatrix,
    setpoint: &Setpoint,
    bids: &BidSet,
) -> Result<AuctionProblem, AuctionError> {
    let periods = setpoint.periods();
    let node_of = |id: BidId, node| {
        network
            .index_of(node)
            .ok_or_else(|| AuctionError::Invalid(format!("{id} is at an unknown node")))
    };
    let mut lp = LinearProgram::new(Sense::Minimize);
    let mut vars = VarMap::default();
    // (var, node, signed injection per unit, period, direction, side sign in balance)
    let mut entries: Vec<(VarId, usize, f64, usize, Direction, f64)> = Vec::new();

    for b in bids.singles() {
        if b.period >= periods {
            return Err(AuctionError::Invalid(format!("{} is outside the horizon", b.id)));
        }
        let n = node_of(b.id, b.node)?;
        let sign = b.direction.offer_sign();
        match b.side {
            Side::Request => {
                let v = lp.add_continuous(format!("r{}", b.id.0), 0.0, b.quantity);
                lp.set_objective(v, -b.price);
                vars.requests.push((b.id, v));
                entries.push((v, n, -sign, b.period, b.direction, -1.0));
            }
            Side::Offer => {
                let v = lp.add_continuous(format!("o{}", b.id.0), 0.0, b.quantity);
                lp.set_objective(v, b.price);
                vars.offers.push((b.id, v));
                entries.push((v, n, sign, b.period, b.direction, 1.0));
            }
        }
    }
    for k in &bids.blocks {
        let v = lp.add_binary(format!("ar{}", k.id.0));
        vars.blocks.push((k.id, v));
        let n = node_of(BidId(k.id.0), k.node)?;
        let mut cost = 0.0;
        for sub in bids.sub_offers(k) {
            if sub.period >= periods {
                return Err(AuctionError::Invalid(format!("{} is outside the horizon", sub.id)));
            }
            cost += sub.price * sub.quantity;
            entries.push((v, n, sub.direction.offer_sign() * sub.quantity, sub.period, sub.direction, sub.quantity));
        }
        lp.set_objective(v, cost);
    }

    for t in 0..periods {
        for dir in Direction::ALL {
            let terms: Vec<(VarId, f64)> = entries
                .iter()
                .filter(|e| e.3 == t && e.4 == dir)
                .map(|e| (e.0, e.5))
                .collect();
            if !terms.is_empty() {
                lp.add_constraint(format!("balance_{dir}_t{t}"), terms, RowBound::Eq(0.0));
            }
        }
    }

    let mut cuts = Vec::new();
    let mut by_period: Vec<Vec<(VarId, usize, f64)>> = vec![Vec::new(); periods];
    for e in &entries {
        by_period[e.3].push((e.0, e.1, e.2));
    }
    for (t, list) in by_period.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let f0 = ptdf.flows(&setpoint.injection[t]);
        for (l, line) in network.lines.iter().enumerate() {
            let cap = line.limit.max(f0[l].abs());
            let mut coef: BTreeMap<usize, f64> = BTreeMap::new();
            for &(v, n, inj) in list {
                *coef.entry(v.0).or_default() += ptdf.get(l, n) * inj;
            }
            let terms: Vec<(VarId, f64)> = coef
                .into_iter()
                .filter(|(_, c)| c.abs() > 1e-12)
                .map(|(v, c)| (VarId(v), c))
                .collect();
            let swing: f64 = terms.iter().map(|(v, c)| c.abs() * lp.var(*v).upper).sum();
            if f0[l].abs() + swing <= cap + 1e-9 {
                continue;
            }
            cuts.push(LineCut {
                period: t,
                line: l,
                terms,
                bound: RowBound::Range(-cap - f0[l], cap - f0[l]),
            });
        }
    }
    Ok(AuctionProblem {
        lp,
        vars,
        cuts,
        bids: bids.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionResult {
    pub outcome: MarketOutcome,
    /// Objective of the welfare stage (negative welfare).
    pub objective: f64,
    pub nodes: usize,
    pub active_cuts: usize,
}

fn violated_cuts(cuts: &[LineCut], active: &[bool], x: &[f64]) -> Vec<usize> {
    cuts.iter()
        .enumerate()
        .filter(|(i, c)| {
            if active[*i] {
                return false;
            }
            let a: f64 = c.terms.iter().map(|(v, k)| k * x[v.0]).sum();
            let (lo, hi) = c.bound.interval();
            a < lo - CUT_TOL || a > hi + CUT_TOL
        })
        .map(|(i, _)| i)
        .collect()
}

/// Solves `base` plus lazily added cuts until the solution respects every cut.
fn solve_with_cuts(
    backend: &dyn Backend,
    base: &LinearProgram,
    cuts: &[LineCut],
    active: &mut [bool],
    options: &MilpOptions,
) -> Result<(SolveResult, usize), AuctionError> {
    let mut nodes = 0;
    loop {
        let mut lp = base.clone();
        for (c, _) in cuts.iter().zip(active.iter()).filter(|(_, a)| **a) {
            lp.add_constraint(format!("line_{}_t{}", c.line, c.period), c.terms.clone(), c.bound);
        }
        let res = if lp.has_integers() {
            backend.solve_milp(&lp, options)?
        } else {
            backend.solve_lp(&lp)?
        };
        nodes += res.nodes;
        match res.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible | SolveStatus::Unbounded => return Err(AuctionError::Infeasible),
            SolveStatus::IterationLimit => {
                return Err(AuctionError::IterationLimit {
                    incumbent: res.has_solution().then(|| -res.objective),
                    best_bound: -res.best_bound,
                })
            }
        }
        let add = violated_cuts(cuts, active, &res.values);
        if add.is_empty() {
            return Ok((res, nodes));
        }
        for i in add {
            active[i] = true;
        }
    }
}

/// Clears the auction with the embedded solver.
pub fn clear_auction(problem: &AuctionProblem) -> Result<AuctionResult, AuctionError> {
    clear_auction_with(problem, &EmbeddedSolver, &MilpOptions::default())
}

/// Maximises welfare, then among welfare-optimal solutions with the same block
/// acceptance picks the least traded volume so that zero-surplus pairs stay out.
pub fn clear_auction_with(
    problem: &AuctionProblem,
    backend: &dyn Backend,
    options: &MilpOptions,
) -> Result<AuctionResult, AuctionError> {
    let mut active = vec![false; problem.cuts.len()];
    let (stage1, mut nodes) = solve_with_cuts(backend, &problem.lp, &problem.cuts, &mut active, options)?;

    let mut lp2 = problem.lp.clone();
    for &(_, v) in &problem.vars.blocks {
        let ar = stage1.values[v.0].round();
        let var = &mut lp2.variables[v.0];
        var.kind = VarKind::Continuous;
        var.lower = ar;
        var.upper = ar;
    }
    let welfare_terms: Vec<(VarId, f64)> = lp2
        .objective
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(j, &c)| (VarId(j), c))
        .collect();
    let slack = 1e-10 * stage1.objective.abs().max(1.0);
    lp2.add_constraint("welfare", welfare_terms, RowBound::Le(stage1.objective + slack));
    lp2.objective = vec![0.0; lp2.num_vars()];
    for &(_, v) in &problem.vars.requests {
        lp2.objective[v.0] = 1.0;
    }
    let (stage2, n2) = solve_with_cuts(backend, &lp2, &problem.cuts, &mut active, options)?;
    nodes += n2;

    let outcome = extract_outcome(problem, &stage2.values)?;
    Ok(AuctionResult {
        outcome,
        objective: stage1.objective,
        nodes,
        active_cuts: active.iter().filter(|a| **a).count(),
    })
}

fn extract_outcome(problem: &AuctionProblem, x: &[f64]) -> Result<MarketOutcome, AuctionError> {
    let bids = &problem.bids;
    let map = bids.bid_map();
    let mut accepted = BTreeMap::new();
    for &(id, v) in problem.vars.requests.iter().chain(&problem.vars.offers) {
        let q = x[v.0].clamp(0.0, map[&id].quantity);
        if q > QTY_EPS {
            accepted.insert(id, q);
        }
    }
    let mut block_acceptance = BTreeMap::new();
    for &(k, v) in &problem.vars.blocks {
        block_acceptance.insert(k, x[v.0].round());
    }
    let trades = pair_trades(bids, &accepted, &block_acceptance);
    let volume = problem
        .vars
        .requests
        .iter()
        .filter_map(|(id, _)| accepted.get(id))
        .sum();
    let mut outcome = MarketOutcome {
        trades,
        social_welfare: 0.0,
        volume,
        accepted,
        block_acceptance,
    };
    outcome.social_welfare = crate::model::social_welfare(&outcome, bids)?;
    Ok(outcome)
}

/// Pairs accepted requests (descending price) with accepted offers and block
/// sub-offers (ascending price) per direction and period, for a readable ledger.
fn pair_trades(bids: &BidSet, accepted: &BTreeMap<BidId, f64>, blocks: &BTreeMap<BlockId, f64>) -> Vec<Trade> {
    let mut groups: BTreeMap<(usize, usize), (Vec<(f64, u64, BidId, f64)>, Vec<(f64, u64, BidId, f64, Option<BlockId>)>)> =
        BTreeMap::new();
    for b in &bids.bids {
        let key = (b.period, b.direction.index());
        match (b.side, b.block_ref) {
            (Side::Request, _) => {
                if let Some(&q) = accepted.get(&b.id) {
                    groups.entry(key).or_default().0.push((b.price, b.arrival_index, b.id, q));
                }
            }
            (Side::Offer, None) => {
                if let Some(&q) = accepted.get(&b.id) {
                    groups.entry(key).or_default().1.push((b.price, b.arrival_index, b.id, q, None));
                }
            }
            (Side::Offer, Some(k)) => {
                if blocks.get(&k).copied().unwrap_or(0.0) > 0.5 {
                    groups.entry(key).or_default().1.push((b.price, b.arrival_index, b.id, b.quantity, Some(k)));
                }
            }
        }
    }
    let by_id = bids.bid_map();
    let mut trades = Vec::new();
    for ((period, _), (mut reqs, mut offs)) in groups {
        reqs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        offs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (mut i, mut j) = (0, 0);
        while i < reqs.len() && j < offs.len() {
            let q = reqs[i].3.min(offs[j].3);
            if q > QTY_EPS {
                let older = if reqs[i].1 <= offs[j].1 { reqs[i].0 } else { offs[j].0 };
                trades.push(Trade {
                    request: reqs[i].2,
                    offer: offs[j].2,
                    block: offs[j].4,
                    period,
                    direction: by_id[&reqs[i].2].direction,
                    quantity: q,
                    clearing_price: older,
                    match_round: trades.len() as u64 + 1,
                });
            }
            reqs[i].3 -= q;
            offs[j].3 -= q;
            if reqs[i].3 <= QTY_EPS {
                i += 1;
            }
            if offs[j].3 <= QTY_EPS {
                j += 1;
            }
        }
    }
    trades
}

/// Builds and clears in one step.
pub fn run_auction(
    network: &Network,
    ptdf: &PtdfMatrix,
    setpoint: &Setpoint,
    bids: &BidSet,
) -> Result<AuctionResult, AuctionError> {
    clear_auction(&build_auction(network, ptdf, setpoint, bids)?)
}
