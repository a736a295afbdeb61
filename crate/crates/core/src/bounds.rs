//! Best and worst arrival sequences for continuous clearing.
//!
//! All requests are booked first; the offer-side units (single offers and blocks)
//! arrive one per round. Each round clears a welfare-maximising LP over the bids
//! submitted so far. The bilevel problem "pick the sequence, then clear round by
//! round" becomes one MILP by replacing every round LP with its KKT conditions
//! and linearising complementarity with indicator binaries.

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{run_auction, AuctionError};
use crate::continuous::{run_sequence, EngineError};
use crate::model::{BidId, BidSet, BlockId, Direction, Network, Setpoint, Side, Submission};
use crate::optimize::{
    Backend, EmbeddedSolver, LinearProgram, MilpOptions, RowBound, Sense, SolveResult, SolveStatus, SolverError,
    VarId, VarKind,
};
use crate::powerflow::PtdfMatrix;

/// Margin added to every primal big-M.
const BIG_M_MARGIN: f64 = 10.0;
const INT_TOL: f64 = 1e-6;
/// Default limit on offer-side units for the reformulation and the oracle.
pub const DEFAULT_MAX_OFFERS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("{units} offer-side bids exceed the limit of {max}")]
    TooManyOffers { units: usize, max: usize },
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("sequence MILP is infeasible")]
    Infeasible,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Auction(#[from] AuctionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundSense {
    /// Lowest welfare over all sequences.
    Worst,
    /// Highest welfare over all sequences.
    Best,
}

/// An instance prepared for sequence optimisation.
#[derive(Debug, Clone)]
pub struct SequenceProblem {
    pub network: Network,
    pub ptdf: PtdfMatrix,
    pub setpoint: Setpoint,
    pub bids: BidSet,
    pub sense: BoundSense,
    /// Offer-side units; one is submitted per round.
    pub units: Vec<Submission>,
    pub requests: Vec<BidId>,
}

impl SequenceProblem {
    pub fn new(
        network: &Network,
        ptdf: &PtdfMatrix,
        setpoint: &Setpoint,
        bids: &BidSet,
        sense: BoundSense,
    ) -> Result<Self, BoundsError> {
        let units = offer_units(bids);
        let requests = bids.requests().map(|b| b.id).collect();
        for b in &bids.bids {
            if network.index_of(b.node).is_none() || b.period >= setpoint.periods() {
                return Err(BoundsError::Invalid(format!("{} has an unknown node or period", b.id)));
            }
        }
        Ok(Self {
            network: network.clone(),
            ptdf: ptdf.clone(),
            setpoint: setpoint.clone(),
            bids: bids.clone(),
            sense,
            units,
            requests,
        })
    }

    pub fn rounds(&self) -> usize {
        self.units.len()
    }

    /// Full submission order for a unit permutation: requests first, by arrival.
    pub fn full_order(&self, units: &[Submission]) -> Vec<Submission> {
        let mut reqs: Vec<_> = self.bids.requests().map(|b| (b.arrival_index, b.id)).collect();
        reqs.sort();
        reqs.into_iter()
            .map(|(_, id)| Submission::Single(id))
            .chain(units.iter().copied())
            .collect()
    }
}

/// Offer-side units in arrival order.
pub fn offer_units(bids: &BidSet) -> Vec<Submission> {
    bids.submissions_by_arrival()
        .into_iter()
        .filter(|s| match s {
            Submission::Single(id) => bids.bid(*id).is_some_and(|b| b.side == Side::Offer),
            Submission::Block(_) => true,
        })
        .collect()
}

/// Primal variables of one round.
#[derive(Debug, Clone, Default)]
pub struct RoundVars {
    pub requests: Vec<VarId>,
    pub offers: Vec<VarId>,
    pub blocks: Vec<VarId>,
}

impl RoundVars {
    fn all(&self) -> impl Iterator<Item = VarId> + '_ {
        self.requests.iter().chain(&self.offers).chain(&self.blocks).copied()
    }
}

/// `inner · x + outer · y ≤ rhs`, with `x` the round's own variables.
#[derive(Debug, Clone)]
pub struct Ineq {
    pub name: String,
    pub inner: Vec<(VarId, f64)>,
    pub outer: Vec<(VarId, f64)>,
    pub rhs: f64,
}

/// One round's clearing LP, written over variables of the single-level program.
#[derive(Debug, Clone)]
pub struct LowerLevel {
    pub round: usize,
    pub vars: RoundVars,
    /// Welfare coefficient of each round variable (maximised).
    pub objective: Vec<(VarId, f64)>,
    pub eq: Vec<Vec<(VarId, f64)>>,
    pub ineq: Vec<Ineq>,
}

impl LowerLevel {
    /// The round LP alone, with every outer variable fixed to `values`.
    pub fn as_program(&self, lp: &LinearProgram, values: &[f64]) -> (LinearProgram, Vec<VarId>) {
        let mut out = LinearProgram::new(Sense::Maximize);
        let own: Vec<VarId> = self.vars.all().collect();
        let local = |v: VarId| own.iter().position(|&o| o == v).map(VarId);
        for &v in &own {
            let var = lp.var(v);
            out.add_continuous(var.name.clone(), 0.0, var.upper);
        }
        for &(v, c) in &self.objective {
            out.set_objective(local(v).expect("round variable"), c);
        }
        for (e, row) in self.eq.iter().enumerate() {
            let terms = row.iter().map(|&(v, c)| (local(v).expect("round variable"), c)).collect();
            out.add_constraint(format!("eq{e}"), terms, RowBound::Eq(0.0));
        }
        for q in &self.ineq {
            let shift: f64 = q.outer.iter().map(|&(v, c)| c * values[v.0]).sum();
            let terms = q.inner.iter().map(|&(v, c)| (local(v).expect("round variable"), c)).collect();
            out.add_constraint(q.name.clone(), terms, RowBound::Le(q.rhs - shift));
        }
        (out, own)
    }
}

/// Static data shared by every round.
struct Layout {
    req_idx: Vec<usize>,
    off_idx: Vec<usize>,
    /// Position of each unit among `offers` (singles) or `blocks`.
    unit_pos: Vec<UnitPos>,
    block_ids: Vec<BlockId>,
    /// Per block: (period, direction, quantity) of each sub-offer and its total cost.
    block_subs: Vec<Vec<(usize, Direction, f64)>>,
    block_cost: Vec<f64>,
    block_node: Vec<usize>,
    node: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
enum UnitPos {
    Offer(usize),
    Block(usize),
}

fn layout(p: &SequenceProblem) -> Layout {
    let bids = &p.bids;
    let req_idx: Vec<usize> = p
        .requests
        .iter()
        .map(|id| bids.bids.iter().position(|b| b.id == *id).expect("request"))
        .collect();
    let mut off_idx = Vec::new();
    let mut block_ids = Vec::new();
    let mut unit_pos = Vec::new();
    for u in &p.units {
        match u {
            Submission::Single(id) => {
                unit_pos.push(UnitPos::Offer(off_idx.len()));
                off_idx.push(bids.bids.iter().position(|b| b.id == *id).expect("offer"));
            }
            Submission::Block(k) => {
                unit_pos.push(UnitPos::Block(block_ids.len()));
                block_ids.push(*k);
            }
        }
    }
    let mut block_subs = Vec::new();
    let mut block_cost = Vec::new();
    let mut block_node = Vec::new();
    for k in &block_ids {
        let blk = bids.block(*k).expect("block");
        block_subs.push(bids.sub_offers(blk).map(|s| (s.period, s.direction, s.quantity)).collect());
        block_cost.push(bids.sub_offers(blk).map(|s| s.price * s.quantity).sum());
        block_node.push(p.network.index_of(blk.node).expect("node"));
    }
    let node = bids.bids.iter().map(|b| p.network.index_of(b.node).expect("node")).collect();
    Layout {
        req_idx,
        off_idx,
        unit_pos,
        block_ids,
        block_subs,
        block_cost,
        block_node,
        node,
    }
}

/// Appends round `i`'s primal variables and constraints to `lp`.
///
/// `s[j][u]` is the sequence binary "unit u is submitted in round j" and `history`
/// holds the primal variables of rounds before `i`.
pub fn build_lower_level(
    lp: &mut LinearProgram,
    problem: &SequenceProblem,
    i: usize,
    s: &[Vec<VarId>],
    history: &[RoundVars],
) -> LowerLevel {
    build_round(lp, problem, &layout(problem), i, s, history)
}

fn build_round(
    lp: &mut LinearProgram,
    p: &SequenceProblem,
    lay: &Layout,
    i: usize,
    s: &[Vec<VarId>],
    history: &[RoundVars],
) -> LowerLevel {
    let bids = &p.bids.bids;
    let mut vars = RoundVars::default();
    let mut objective = Vec::new();
    for &r in &lay.req_idx {
        let v = lp.add_continuous(format!("p{i}_r{}", bids[r].id.0), 0.0, bids[r].quantity);
        objective.push((v, bids[r].price));
        vars.requests.push(v);
    }
    for &o in &lay.off_idx {
        let v = lp.add_continuous(format!("p{i}_o{}", bids[o].id.0), 0.0, bids[o].quantity);
        objective.push((v, -bids[o].price));
        vars.offers.push(v);
    }
    for (b, k) in lay.block_ids.iter().enumerate() {
        let v = lp.add_continuous(format!("w{i}_k{}", k.0), 0.0, 1.0);
        objective.push((v, -lay.block_cost[b]));
        vars.blocks.push(v);
    }

    // Directional balance per period.
    let mut eq = Vec::new();
    for t in 0..p.setpoint.periods() {
        for dir in Direction::ALL {
            let mut row = Vec::new();
            for (n, &o) in lay.off_idx.iter().enumerate() {
                if bids[o].period == t && bids[o].direction == dir {
                    row.push((vars.offers[n], 1.0));
                }
            }
            for (b, subs) in lay.block_subs.iter().enumerate() {
                for &(st, sd, q) in subs {
                    if st == t && sd == dir {
                        row.push((vars.blocks[b], q));
                    }
                }
            }
            if row.is_empty() {
                continue;
            }
            for (n, &r) in lay.req_idx.iter().enumerate() {
                if bids[r].period == t && bids[r].direction == dir {
                    row.push((vars.requests[n], -1.0));
                }
            }
            lp.add_constraint(format!("bal{i}_{dir}_t{t}"), row.clone(), RowBound::Eq(0.0));
            eq.push(row);
        }
    }

    let mut ineq = Vec::new();
    // Residual quantity of requests and offers.
    let residual = |name: String, own: VarId, pick: &dyn Fn(&RoundVars) -> VarId, q: f64| Ineq {
        name,
        inner: vec![(own, 1.0)],
        outer: history.iter().map(|h| (pick(h), 1.0)).collect(),
        rhs: q,
    };
    for (n, &r) in lay.req_idx.iter().enumerate() {
        ineq.push(residual(format!("res{i}_r{}", bids[r].id.0), vars.requests[n], &|h| h.requests[n], bids[r].quantity));
    }
    for (n, &o) in lay.off_idx.iter().enumerate() {
        ineq.push(residual(format!("res{i}_o{}", bids[o].id.0), vars.offers[n], &|h| h.offers[n], bids[o].quantity));
    }
    // Offers trade only once submitted; blocks only in their own round.
    for (u, pos) in lay.unit_pos.iter().enumerate() {
        match *pos {
            UnitPos::Offer(n) => {
                let q = bids[lay.off_idx[n]].quantity;
                ineq.push(Ineq {
                    name: format!("gate{i}_o{}", bids[lay.off_idx[n]].id.0),
                    inner: vec![(vars.offers[n], 1.0)],
                    outer: (0..=i).map(|j| (s[j][u], -q)).collect(),
                    rhs: 0.0,
                });
            }
            UnitPos::Block(b) => ineq.push(Ineq {
                name: format!("gate{i}_k{}", lay.block_ids[b].0),
                inner: vec![(vars.blocks[b], 1.0)],
                outer: vec![(s[i][u], -1.0)],
                rhs: 0.0,
            }),
        }
    }
    // Cumulative line flows after this round.
    for t in 0..p.setpoint.periods() {
        let f0 = p.ptdf.flows(&p.setpoint.injection[t]);
        for (l, line) in p.network.lines.iter().enumerate() {
            let cap = line.limit.max(f0[l].abs());
            let terms_of = |rv: &RoundVars| -> Vec<(VarId, f64)> {
                let mut out = Vec::new();
                for (n, &r) in lay.req_idx.iter().enumerate() {
                    if bids[r].period == t {
                        let c = -bids[r].direction.offer_sign() * p.ptdf.get(l, lay.node[r]);
                        out.push((rv.requests[n], c));
                    }
                }
                for (n, &o) in lay.off_idx.iter().enumerate() {
                    if bids[o].period == t {
                        let c = bids[o].direction.offer_sign() * p.ptdf.get(l, lay.node[o]);
                        out.push((rv.offers[n], c));
                    }
                }
                for (b, subs) in lay.block_subs.iter().enumerate() {
                    let c: f64 = subs
                        .iter()
                        .filter(|x| x.0 == t)
                        .map(|&(_, d, q)| d.offer_sign() * q * p.ptdf.get(l, lay.block_node[b]))
                        .sum();
                    out.push((rv.blocks[b], c));
                }
                out.retain(|(_, c)| c.abs() > 1e-12);
                out
            };
            let inner = terms_of(&vars);
            if inner.is_empty() {
                continue;
            }
            // Cumulative acceptance of each bid is at most its quantity (or one block).
            let up: f64 = inner.iter().map(|&(v, c)| c.max(0.0) * lp.var(v).upper).sum();
            let down: f64 = inner.iter().map(|&(v, c)| (-c).max(0.0) * lp.var(v).upper).sum();
            let outer: Vec<(VarId, f64)> = history.iter().flat_map(terms_of).collect();
            if f0[l] + up > cap + 1e-9 {
                ineq.push(Ineq {
                    name: format!("line{i}_l{l}_t{t}_hi"),
                    inner: inner.clone(),
                    outer: outer.clone(),
                    rhs: cap - f0[l],
                });
            }
            if f0[l] - down < -cap - 1e-9 {
                let neg = |v: &[(VarId, f64)]| v.iter().map(|&(x, c)| (x, -c)).collect::<Vec<_>>();
                ineq.push(Ineq {
                    name: format!("line{i}_l{l}_t{t}_lo"),
                    inner: neg(&inner),
                    outer: neg(&outer),
                    rhs: cap + f0[l],
                });
            }
        }
    }
    for q in &ineq {
        lp.add_constraint(q.name.clone(), q.inner.iter().chain(&q.outer).copied().collect(), RowBound::Le(q.rhs));
    }
    LowerLevel {
        round: i,
        vars,
        objective,
        eq,
        ineq,
    }
}

/// The assembled single-level program.
#[derive(Debug, Clone)]
pub struct KktModel {
    pub lp: LinearProgram,
    /// `s[round][unit]`.
    pub s: Vec<Vec<VarId>>,
    pub rounds: Vec<LowerLevel>,
    /// Dual variables carrying the heuristic bound `dual_m`.
    pub bounded_duals: Vec<VarId>,
    pub dual_m: f64,
}

fn box_max(lp: &LinearProgram, terms: &[(VarId, f64)]) -> f64 {
    terms
        .iter()
        .map(|&(v, c)| {
            let var = lp.var(v);
            (c * var.lower).max(c * var.upper)
        })
        .sum()
}

/// Dual bound guess from objective and balance coefficients.
fn initial_dual_m(p: &SequenceProblem, lay: &Layout) -> f64 {
    let pmax = p.bids.bids.iter().map(|b| b.price).fold(0.0, f64::max);
    let block_scale = lay
        .block_subs
        .iter()
        .zip(&lay.block_cost)
        .map(|(subs, c)| c + pmax * subs.iter().map(|x| x.2).sum::<f64>())
        .fold(0.0, f64::max);
    let mut min_sens: f64 = 1.0;
    for l in 0..p.ptdf.num_lines() {
        for &v in p.ptdf.row(l) {
            if v.abs() > 1e-9 {
                min_sens = min_sens.min(v.abs());
            }
        }
    }
    10.0 * (pmax + block_scale + 1.0) / min_sens
}

/// Builds the single-level KKT program with the given dual big-M.
pub fn build_kkt(problem: &SequenceProblem, dual_m: f64) -> KktModel {
    let lay = layout(problem);
    let m = problem.rounds();
    let sense = match problem.sense {
        BoundSense::Worst => Sense::Minimize,
        BoundSense::Best => Sense::Maximize,
    };
    let mut lp = LinearProgram::new(sense);
    let s: Vec<Vec<VarId>> = (0..m)
        .map(|i| (0..m).map(|u| lp.add_binary(format!("s{i}_{u}"))).collect())
        .collect();
    for i in 0..m {
        lp.add_constraint(format!("round{i}"), (0..m).map(|u| (s[i][u], 1.0)).collect(), RowBound::Eq(1.0));
    }
    for u in 0..m {
        lp.add_constraint(format!("unit{u}"), (0..m).map(|i| (s[i][u], 1.0)).collect(), RowBound::Eq(1.0));
    }

    let mut rounds: Vec<LowerLevel> = Vec::with_capacity(m);
    let mut history: Vec<RoundVars> = Vec::new();
    for i in 0..m {
        let ll = build_round(&mut lp, problem, &lay, i, &s, &history);
        history.push(ll.vars.clone());
        rounds.push(ll);
    }

    let mut bounded_duals = Vec::new();
    for ll in &rounds {
        let i = ll.round;
        for &(v, c) in &ll.objective {
            lp.add_objective(v, c);
        }
        let mu: Vec<VarId> = (0..ll.eq.len())
            .map(|e| lp.add_continuous(format!("mu{i}_{e}"), f64::NEG_INFINITY, f64::INFINITY))
            .collect();
        let lam: Vec<VarId> = ll
            .ineq
            .iter()
            .map(|q| lp.add_continuous(format!("lam_{}", q.name), 0.0, dual_m))
            .collect();
        let own: Vec<VarId> = ll.vars.all().collect();
        let nu: Vec<VarId> = own
            .iter()
            .map(|&v| {
                let name = format!("nu_{}", lp.var(v).name);
                lp.add_continuous(name, 0.0, dual_m)
            })
            .collect();
        bounded_duals.extend(&lam);
        bounded_duals.extend(&nu);

        // Stationarity: A'mu + G'lambda - nu = c for each round variable.
        for (k, &x) in own.iter().enumerate() {
            let mut terms = Vec::new();
            for (e, row) in ll.eq.iter().enumerate() {
                for &(v, a) in row {
                    if v == x {
                        terms.push((mu[e], a));
                    }
                }
            }
            for (j, q) in ll.ineq.iter().enumerate() {
                for &(v, g) in &q.inner {
                    if v == x {
                        terms.push((lam[j], g));
                    }
                }
            }
            terms.push((nu[k], -1.0));
            let c = ll.objective.iter().find(|o| o.0 == x).map_or(0.0, |o| o.1);
            lp.add_constraint(format!("stat_{}", lp.var(x).name.clone()), terms, RowBound::Eq(c));
        }

        // Complementary slackness for each inequality.
        for (j, q) in ll.ineq.iter().enumerate() {
            let z = lp.add_binary(format!("z_{}", q.name));
            lp.add_constraint(format!("cs_dual_{}", q.name), vec![(lam[j], 1.0), (z, -dual_m)], RowBound::Le(0.0));
            let neg: Vec<(VarId, f64)> = q.inner.iter().chain(&q.outer).map(|&(v, c)| (v, -c)).collect();
            let big_m = q.rhs + box_max(&lp, &neg) + BIG_M_MARGIN;
            let mut terms = neg;
            terms.push((z, big_m));
            lp.add_constraint(format!("cs_slack_{}", q.name), terms, RowBound::Le(big_m - q.rhs));
        }
        // ... and for nonnegativity of each round variable.
        for (k, &x) in own.iter().enumerate() {
            let ub = lp.var(x).upper;
            let y = lp.add_binary(format!("y_{}", lp.var(x).name.clone()));
            lp.add_constraint(format!("cs_nu_{k}_{i}"), vec![(nu[k], 1.0), (y, -dual_m)], RowBound::Le(0.0));
            lp.add_constraint(format!("cs_x_{k}_{i}"), vec![(x, 1.0), (y, ub)], RowBound::Le(ub));
        }
    }
    KktModel {
        lp,
        s,
        rounds,
        bounded_duals,
        dual_m,
    }
}

/// A welfare value that is exact when the relaxation was tight, otherwise an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub lower: f64,
    pub upper: f64,
    pub relaxation_tight: bool,
    /// Offer-side unit order that attains the bound.
    pub witness: Vec<Submission>,
    /// `false` when a node limit cut the search short.
    pub proven: bool,
}

impl BoundValue {
    pub fn value(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub worst: Option<BoundValue>,
    pub best: Option<BoundValue>,
    pub auction_welfare: f64,
    pub worst_pct: Option<(f64, f64)>,
    pub best_pct: Option<(f64, f64)>,
}

impl BoundsReport {
    pub fn new(worst: Option<BoundValue>, best: Option<BoundValue>, auction_welfare: f64) -> Self {
        let pct = |b: &Option<BoundValue>| {
            b.as_ref()
                .filter(|_| auction_welfare > 0.0)
                .map(|b| (100.0 * b.lower / auction_welfare, 100.0 * b.upper / auction_welfare))
        };
        Self {
            worst_pct: pct(&worst),
            best_pct: pct(&best),
            worst,
            best,
            auction_welfare,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundsOptions {
    pub milp: MilpOptions,
    pub max_offers: usize,
    /// How often the dual big-M may be raised when it turns out binding.
    pub dual_m_retries: usize,
}

impl Default for BoundsOptions {
    fn default() -> Self {
        Self {
            milp: MilpOptions::default(),
            max_offers: DEFAULT_MAX_OFFERS,
            dual_m_retries: 3,
        }
    }
}

fn witness(model: &KktModel, units: &[Submission], x: &[f64]) -> Vec<Submission> {
    model
        .s
        .iter()
        .map(|row| {
            let u = (0..row.len())
                .max_by(|&a, &b| x[row[a].0].total_cmp(&x[row[b].0]))
                .unwrap_or(0);
            units[u]
        })
        .collect()
}

fn blocks_integral(model: &KktModel, x: &[f64]) -> bool {
    model
        .rounds
        .iter()
        .flat_map(|r| &r.vars.blocks)
        .all(|v| (x[v.0] - x[v.0].round()).abs() <= INT_TOL)
}

fn dual_m_binding(model: &KktModel, x: &[f64]) -> bool {
    model.bounded_duals.iter().any(|v| x[v.0] >= model.dual_m * (1.0 - 1e-6))
}

/// Fixes the sequence binaries to one unit order.
fn fix_sequence(model: &KktModel, units: &[Submission], order: &[Submission]) -> LinearProgram {
    let mut lp = model.lp.clone();
    for (i, row) in model.s.iter().enumerate() {
        for (u, v) in row.iter().enumerate() {
            let on = if units[u] == order[i] { 1.0 } else { 0.0 };
            lp.variables[v.0].lower = on;
            lp.variables[v.0].upper = on;
        }
    }
    lp
}

/// Sequence used as the starting incumbent: cheapest units first for the best
/// case, dearest first for the worst case.
pub fn heuristic_order(problem: &SequenceProblem) -> Vec<Submission> {
    let price = |u: &Submission| match u {
        Submission::Single(id) => problem.bids.bid(*id).map_or(0.0, |b| b.price),
        Submission::Block(k) => problem.bids.block(*k).map_or(0.0, |blk| {
            let subs: Vec<_> = problem.bids.sub_offers(blk).collect();
            let q: f64 = subs.iter().map(|s| s.quantity).sum();
            subs.iter().map(|s| s.price * s.quantity).sum::<f64>() / q.max(1e-12)
        }),
    };
    let mut order = problem.units.clone();
    order.sort_by(|a, b| price(a).total_cmp(&price(b)));
    if problem.sense == BoundSense::Worst {
        order.reverse();
    }
    order
}

/// Welfare the single-level program assigns to one fixed unit order.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEval {
    pub welfare: f64,
    pub relaxation_tight: bool,
    pub values: Vec<f64>,
}

pub fn evaluate_sequence(
    problem: &SequenceProblem,
    order: &[Submission],
    backend: &dyn Backend,
    options: &MilpOptions,
) -> Result<SequenceEval, BoundsError> {
    let lay = layout(problem);
    let mut dual_m = initial_dual_m(problem, &lay);
    for _ in 0..4 {
        let model = build_kkt(problem, dual_m);
        let lp = fix_sequence(&model, &problem.units, order);
        let res = backend.solve_milp(&lp, options)?;
        if !res.has_solution() {
            return Err(BoundsError::Infeasible);
        }
        if dual_m_binding(&model, &res.values) {
            dual_m *= 10.0;
            continue;
        }
        return Ok(SequenceEval {
            welfare: res.objective,
            relaxation_tight: blocks_integral(&model, &res.values),
            values: res.values,
        });
    }
    Err(BoundsError::Infeasible)
}

fn solve_model(
    lp: &LinearProgram,
    backend: &dyn Backend,
    options: &MilpOptions,
    incumbent: Option<Vec<f64>>,
) -> Result<SolveResult, BoundsError> {
    let opts = MilpOptions {
        incumbent,
        ..options.clone()
    };
    let res = backend.solve_milp(lp, &opts)?;
    match res.status {
        SolveStatus::Optimal | SolveStatus::IterationLimit if res.has_solution() => Ok(res),
        _ => Err(BoundsError::Infeasible),
    }
}

/// Solves one sense of the sequence problem through the KKT reformulation.
pub fn reformulate_and_solve(
    problem: &SequenceProblem,
    backend: &dyn Backend,
    options: &BoundsOptions,
) -> Result<BoundValue, BoundsError> {
    if problem.rounds() > options.max_offers {
        return Err(BoundsError::TooManyOffers {
            units: problem.rounds(),
            max: options.max_offers,
        });
    }
    if problem.rounds() == 0 {
        return Ok(BoundValue {
            lower: 0.0,
            upper: 0.0,
            relaxation_tight: true,
            witness: Vec::new(),
            proven: true,
        });
    }
    let lay = layout(problem);
    let mut dual_m = initial_dual_m(problem, &lay);
    for _ in 0..=options.dual_m_retries {
        let model = build_kkt(problem, dual_m);
        let start = heuristic_order(problem);
        let incumbent = evaluate_sequence(problem, &start, backend, &options.milp)
            .ok()
            .filter(|e| model.lp.num_vars() == e.values.len())
            .map(|e| e.values);
        let res = solve_model(&model.lp, backend, &options.milp, incumbent)?;
        if dual_m_binding(&model, &res.values) {
            dual_m *= 10.0;
            continue;
        }
        let proven = res.status == SolveStatus::Optimal;
        let relaxed = res.objective;
        let bound = if proven { relaxed } else { res.best_bound };
        let tight = blocks_integral(&model, &res.values);
        let mut seq = witness(&model, &problem.units, &res.values);
        let (mut lower, mut upper) = match problem.sense {
            BoundSense::Worst => (bound, relaxed),
            BoundSense::Best => (relaxed, bound),
        };
        if !tight {
            // Restore binary acceptance and report the interval between both values.
            let mut lp = model.lp.clone();
            for v in model.rounds.iter().flat_map(|r| &r.vars.blocks) {
                lp.variables[v.0].kind = VarKind::Binary;
            }
            let restored = solve_model(&lp, backend, &options.milp, None)?;
            seq = witness(&model, &problem.units, &restored.values);
            match problem.sense {
                BoundSense::Worst => upper = restored.objective,
                BoundSense::Best => lower = restored.objective,
            }
        }
        if lower > upper {
            std::mem::swap(&mut lower, &mut upper);
        }
        return Ok(BoundValue {
            lower,
            upper,
            relaxation_tight: tight,
            witness: seq,
            proven,
        });
    }
    Err(BoundsError::Infeasible)
}

/// Worst and best case together with the auction welfare for normalisation.
pub fn bounds_report(
    network: &Network,
    ptdf: &PtdfMatrix,
    setpoint: &Setpoint,
    bids: &BidSet,
    senses: &[BoundSense],
    options: &BoundsOptions,
) -> Result<BoundsReport, BoundsError> {
    let auction = run_auction(network, ptdf, setpoint, bids)?;
    let mut worst = None;
    let mut best = None;
    for &sense in senses {
        let problem = SequenceProblem::new(network, ptdf, setpoint, bids, sense)?;
        let v = reformulate_and_solve(&problem, &EmbeddedSolver, options)?;
        match sense {
            BoundSense::Worst => worst = Some(v),
            BoundSense::Best => best = Some(v),
        }
    }
    Ok(BoundsReport::new(worst, best, auction.outcome.social_welfare))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub min: f64,
    pub max: f64,
    pub argmin: Vec<Submission>,
    pub argmax: Vec<Submission>,
    /// Every offer-side order with its welfare, in enumeration order.
    pub table: Vec<(Vec<Submission>, f64)>,
}

/// Runs the continuous engine for every order of the offer-side units, with all
/// requests booked first.
pub fn permutation_oracle(
    network: &Network,
    ptdf: &PtdfMatrix,
    setpoint: &Setpoint,
    bids: &BidSet,
    max_offers: usize,
) -> Result<OracleResult, BoundsError> {
    let problem = SequenceProblem::new(network, ptdf, setpoint, bids, BoundSense::Best)?;
    let m = problem.rounds();
    if m > max_offers {
        return Err(BoundsError::TooManyOffers { units: m, max: max_offers });
    }
    let perms: Vec<Vec<Submission>> = problem.units.iter().copied().permutations(m).collect();
    let table = perms
        .into_par_iter()
        .map(|perm| {
            let order = problem.full_order(&perm);
            let run = run_sequence(network, ptdf, setpoint, bids, &order)?;
            Ok((perm, run.outcome.social_welfare))
        })
        .collect::<Result<Vec<_>, BoundsError>>()?;
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut argmin, mut argmax) = (Vec::new(), Vec::new());
    for (perm, w) in &table {
        if *w < min {
            min = *w;
            argmin = perm.clone();
        }
        if *w > max {
            max = *w;
            argmax = perm.clone();
        }
    }
    Ok(OracleResult {
        min,
        max,
        argmin,
        argmax,
        table,
    })
}

#[cfg(test)]
mod tests;
