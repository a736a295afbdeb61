//! Continuous clearing: first-come-first-served matching on per-(direction, period)
//! order books with a network check on every match, plus all-or-nothing block bids.

mod book;
mod select;

use std::collections::{HashMap, HashSet};

use log::debug;
use thiserror::Error;

pub use book::{BookEntry, OrderBook, QTY_EPS};
pub use select::{build_selection_lp, select_block_requests, Candidate, SelectionInput, SelectionLp};

use crate::model::{
    Bid, BidId, BidSet, BlockBid, BlockId, Direction, MarketOutcome, ModelError, Network, Setpoint, Side,
    Submission, Trade,
};
use crate::optimize::{Backend, EmbeddedSolver, SolverError};
use crate::powerflow::{quantity_max_in, OverloadPolicy, PowerflowError, PtdfMatrix, FLOW_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("id {0} was already submitted")]
    DuplicateId(u32),
    #[error("arrival index {arrival} is not after {last}")]
    ArrivalOrder { arrival: u64, last: u64 },
    #[error("invalid bid {id}: {reason}")]
    InvalidBid { id: String, reason: String },
    #[error("submission {0} is not in the bid set")]
    UnknownSubmission(u32),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Powerflow(#[from] PowerflowError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubStatus {
    Unmatched,
    Potential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubOfferState {
    pub bid: BidId,
    pub status: SubStatus,
    pub candidates: Vec<BidId>,
    pub assignment: Vec<(BidId, f64)>,
}

/// A block waiting for every sub-offer to find network-feasible coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingBlock {
    pub id: BlockId,
    pub node: usize,
    pub arrival: u64,
    pub subs: Vec<SubOfferState>,
}

#[derive(Debug, Clone)]
struct Registered {
    bid: Bid,
    node: usize,
}

/// State of one continuous market run. Single-threaded by construction.
pub struct EngineState<'a> {
    network: &'a Network,
    ptdf: &'a PtdfMatrix,
    backend: &'a dyn Backend,
    policy: OverloadPolicy,
    injection: Vec<Vec<f64>>,
    flows: Vec<Vec<f64>>,
    books: Vec<OrderBook>,
    bids: HashMap<BidId, Registered>,
    units: HashSet<u32>,
    pending: Vec<PendingBlock>,
    ledger: Vec<Trade>,
    round: u64,
    last_arrival: Option<u64>,
}

fn book_index(direction: Direction, period: usize) -> usize {
    period * 2 + direction.index()
}

impl<'a> EngineState<'a> {
    pub fn new(network: &'a Network, ptdf: &'a PtdfMatrix, setpoint: &Setpoint) -> Result<Self, EngineError> {
        Self::with_backend(network, ptdf, setpoint, &EmbeddedSolver)
    }

    pub fn with_backend(
        network: &'a Network,
        ptdf: &'a PtdfMatrix,
        setpoint: &Setpoint,
        backend: &'a dyn Backend,
    ) -> Result<Self, EngineError> {
        if ptdf.num_nodes() != network.num_nodes() || ptdf.num_lines() != network.num_lines() {
            return Err(PowerflowError::BadNetwork("PTDF does not match the network".into()).into());
        }
        if setpoint.injection.iter().any(|row| row.len() != network.num_nodes()) {
            return Err(PowerflowError::BadNetwork("setpoint row length differs from node count".into()).into());
        }
        let flows = setpoint.injection.iter().map(|inj| ptdf.flows(inj)).collect();
        Ok(Self {
            network,
            ptdf,
            backend,
            policy: OverloadPolicy::NoWorsen,
            injection: setpoint.injection.clone(),
            flows,
            books: vec![OrderBook::default(); setpoint.periods() * 2],
            bids: HashMap::new(),
            units: HashSet::new(),
            pending: Vec::new(),
            ledger: Vec::new(),
            round: 0,
            last_arrival: None,
        })
    }

    pub fn periods(&self) -> usize {
        self.injection.len()
    }

    /// Current nodal injections: the initial setpoint plus all committed trades.
    pub fn setpoint(&self) -> Setpoint {
        Setpoint {
            injection: self.injection.clone(),
        }
    }

    pub fn flows(&self) -> &[Vec<f64>] {
        &self.flows
    }

    pub fn book(&self, direction: Direction, period: usize) -> &OrderBook {
        &self.books[book_index(direction, period)]
    }

    pub fn pending_blocks(&self) -> &[PendingBlock] {
        &self.pending
    }

    pub fn ledger(&self) -> &[Trade] {
        &self.ledger
    }

    pub fn into_ledger(self) -> Vec<Trade> {
        self.ledger
    }

    fn check_arrival(&self, unit: u32, arrival: u64) -> Result<(), EngineError> {
        if self.units.contains(&unit) {
            return Err(EngineError::DuplicateId(unit));
        }
        if let Some(last) = self.last_arrival {
            if arrival <= last {
                return Err(EngineError::ArrivalOrder { arrival, last });
            }
        }
        Ok(())
    }

    fn register(&self, bid: &Bid) -> Result<Registered, EngineError> {
        let invalid = |reason: &str| EngineError::InvalidBid {
            id: bid.id.to_string(),
            reason: reason.to_string(),
        };
        if self.bids.contains_key(&bid.id) {
            return Err(EngineError::DuplicateId(bid.id.0));
        }
        if !(bid.quantity > 0.0) || !bid.quantity.is_finite() {
            return Err(invalid("quantity must be positive"));
        }
        if !(bid.price >= 0.0) || !bid.price.is_finite() {
            return Err(invalid("negative price"));
        }
        if bid.period >= self.periods() {
            return Err(invalid("period outside horizon"));
        }
        let node = self.network.index_of(bid.node).ok_or_else(|| invalid("unknown node"))?;
        Ok(Registered { bid: bid.clone(), node })
    }

    /// Submits a single request or offer; returns the trades it caused.
    pub fn submit_bid(&mut self, bid: &Bid) -> Result<Vec<Trade>, EngineError> {
        if bid.block_ref.is_some() {
            return Err(EngineError::InvalidBid {
                id: bid.id.to_string(),
                reason: "sub-offers are submitted with their block".into(),
            });
        }
        self.check_arrival(bid.id.0, bid.arrival_index)?;
        let reg = self.register(bid)?;
        self.units.insert(bid.id.0);
        self.last_arrival = Some(bid.arrival_index);
        let node = reg.node;
        self.bids.insert(bid.id, reg);

        let start = self.ledger.len();
        let remaining = self.match_single(bid, node)?;
        if remaining > QTY_EPS {
            self.books[book_index(bid.direction, bid.period)].insert(
                bid.side,
                BookEntry {
                    bid: bid.id,
                    price: bid.price,
                    arrival: bid.arrival_index,
                    node,
                    remaining,
                },
            );
            if bid.side == Side::Request {
                self.offer_to_pending(bid)?;
            }
        }
        Ok(self.ledger[start..].to_vec())
    }

    /// Walks the opposite book in priority order, matching up to the network limit.
    fn match_single(&mut self, bid: &Bid, node: usize) -> Result<f64, EngineError> {
        let counter = match bid.side {
            Side::Request => Side::Offer,
            Side::Offer => Side::Request,
        };
        let bi = book_index(bid.direction, bid.period);
        let mut remaining = bid.quantity;
        let mut i = 0;
        while remaining > QTY_EPS {
            let Some(entry) = self.books[bi].side(counter).get(i).cloned() else {
                break;
            };
            let compatible = match bid.side {
                Side::Request => bid.price >= entry.price,
                Side::Offer => entry.price >= bid.price,
            };
            if !compatible {
                break;
            }
            let (offer_node, request_node) = match bid.side {
                Side::Request => (entry.node, node),
                Side::Offer => (node, entry.node),
            };
            let q = quantity_max_in(
                &self.flows[bid.period],
                self.network,
                self.ptdf,
                offer_node,
                request_node,
                bid.direction,
                remaining.min(entry.remaining),
                self.policy,
            )?;
            if q <= QTY_EPS {
                debug!("{} skips {}: network leaves no room", bid.id, entry.bid);
                i += 1;
                continue;
            }
            let (request, offer) = match bid.side {
                Side::Request => (bid.id, entry.bid),
                Side::Offer => (entry.bid, bid.id),
            };
            self.round += 1;
            self.execute(Trade {
                request,
                offer,
                block: None,
                period: bid.period,
                direction: bid.direction,
                quantity: q,
                clearing_price: entry.price,
                match_round: self.round,
            });
            remaining -= q;
            if self.books[bi].consume(counter, entry.bid, q) > 0.0 {
                i += 1;
            }
        }
        Ok(remaining)
    }

    fn apply_injection(&mut self, period: usize, offer_node: usize, request_node: usize, direction: Direction, q: f64) {
        let s = direction.offer_sign() * q;
        self.injection[period][offer_node] += s;
        self.injection[period][request_node] -= s;
        for (l, f) in self.flows[period].iter_mut().enumerate() {
            *f += q * self.ptdf.match_sensitivity(l, offer_node, request_node, direction);
        }
    }

    fn execute(&mut self, trade: Trade) {
        let offer_node = self.bids[&trade.offer].node;
        let request_node = self.bids[&trade.request].node;
        self.apply_injection(trade.period, offer_node, request_node, trade.direction, trade.quantity);
        debug!(
            "round {}: {} <- {} {} kWh at {} ({} t{})",
            trade.match_round, trade.request, trade.offer, trade.quantity, trade.clearing_price, trade.direction, trade.period
        );
        self.ledger.push(trade);
    }

    /// Submits a block with its sub-offers; returns the trades if it committed at once.
    pub fn submit_block(&mut self, block: &BlockBid, subs: &[Bid]) -> Result<Vec<Trade>, EngineError> {
        self.check_arrival(block.id.0, block.arrival_index)?;
        let invalid = |reason: &str| EngineError::InvalidBid {
            id: block.id.to_string(),
            reason: reason.to_string(),
        };
        if subs.len() < 2 || subs.len() != block.sub_offers.len() {
            return Err(invalid("block needs ≥2 sub-offers"));
        }
        let node = self.network.index_of(block.node).ok_or_else(|| invalid("unknown node"))?;
        let mut periods = HashSet::new();
        let mut regs = Vec::with_capacity(subs.len());
        for (sub, &listed) in subs.iter().zip(&block.sub_offers) {
            if sub.id != listed || sub.block_ref != Some(block.id) || sub.side != Side::Offer {
                return Err(invalid("sub-offers do not match the block"));
            }
            if sub.node != block.node || !periods.insert(sub.period) {
                return Err(invalid("sub-offers must share the node and cover distinct periods"));
            }
            regs.push(self.register(sub)?);
        }
        self.units.insert(block.id.0);
        self.last_arrival = Some(block.arrival_index);
        for r in regs {
            self.bids.insert(r.bid.id, r);
        }
        let pending = PendingBlock {
            id: block.id,
            node,
            arrival: block.arrival_index,
            subs: subs
                .iter()
                .map(|s| SubOfferState {
                    bid: s.id,
                    status: SubStatus::Unmatched,
                    candidates: Vec::new(),
                    assignment: Vec::new(),
                })
                .collect(),
        };
        self.pending.push(pending);
        let idx = self.pending.len() - 1;
        Ok(self.try_match_block(idx)?.unwrap_or_default())
    }

    /// Gives a freshly booked request to every pending block it could serve.
    fn offer_to_pending(&mut self, request: &Bid) -> Result<(), EngineError> {
        let mut affected = Vec::new();
        for pb in &self.pending {
            let fits = pb.subs.iter().any(|s| {
                let sub = &self.bids[&s.bid].bid;
                sub.direction == request.direction && sub.period == request.period && request.price >= sub.price
            });
            if fits {
                affected.push(pb.id);
            }
        }
        for id in affected {
            if let Some(idx) = self.pending.iter().position(|p| p.id == id) {
                self.try_match_block(idx)?;
            }
        }
        Ok(())
    }

    /// Resident requests compatible with a sub-offer, in book priority order.
    fn candidates_for(&self, sub: &Bid) -> Vec<Candidate> {
        self.books[book_index(sub.direction, sub.period)]
            .side(Side::Request)
            .iter()
            .take_while(|e| e.price >= sub.price)
            .map(|e| Candidate {
                bid: e.bid,
                node: e.node,
                price: e.price,
                remaining: e.remaining,
            })
            .collect()
    }

    /// Finds coverage for one sub-offer against the current state.
    fn evaluate_sub(&self, block_node: usize, sub: &Bid, candidates: &[Candidate]) -> Result<Option<Vec<(BidId, f64)>>, EngineError> {
        match candidates {
            [] => Ok(None),
            [only] => {
                if only.remaining + QTY_EPS < sub.quantity {
                    return Ok(None);
                }
                let q = quantity_max_in(
                    &self.flows[sub.period],
                    self.network,
                    self.ptdf,
                    block_node,
                    only.node,
                    sub.direction,
                    sub.quantity,
                    self.policy,
                )?;
                Ok((q >= sub.quantity - QTY_EPS).then(|| vec![(only.bid, sub.quantity)]))
            }
            _ => {
                let input = SelectionInput {
                    network: self.network,
                    injection: &self.injection[sub.period],
                    flows: &self.flows[sub.period],
                    block_node,
                    direction: sub.direction,
                    quantity: sub.quantity,
                    price: sub.price,
                    policy: self.policy,
                };
                Ok(select_block_requests(self.backend, &input, candidates)?)
            }
        }
    }

    /// Checks that a stored assignment is still executable: requests resident with
    /// enough quantity and no line pushed past its current cap.
    fn assignment_valid(&self, block_node: usize, sub: &Bid, assignment: &[(BidId, f64)]) -> bool {
        let book = &self.books[book_index(sub.direction, sub.period)];
        let mut delta = vec![0.0; self.network.num_lines()];
        for &(r, q) in assignment {
            let Some(entry) = book.find(Side::Request, r) else {
                return false;
            };
            if entry.remaining + QTY_EPS < q || entry.price < sub.price {
                return false;
            }
            for (l, d) in delta.iter_mut().enumerate() {
                *d += q * self.ptdf.match_sensitivity(l, block_node, entry.node, sub.direction);
            }
        }
        self.network
            .lines
            .iter()
            .zip(&self.flows[sub.period])
            .zip(&delta)
            .all(|((line, &f), &d)| {
                let cap = match self.policy {
                    OverloadPolicy::Reject => line.limit,
                    OverloadPolicy::NoWorsen => line.limit.max(f.abs()),
                };
                (f + d).abs() <= cap + FLOW_TOL
            })
    }

    /// Block matching: every sub-offer needs a potential match before the block commits.
    /// Returns the committed trades, or `None` while the block keeps waiting.
    fn try_match_block(&mut self, idx: usize) -> Result<Option<Vec<Trade>>, EngineError> {
        let node = self.pending[idx].node;
        for _pass in 0..=self.pending[idx].subs.len() {
            for s in 0..self.pending[idx].subs.len() {
                let sub = self.bids[&self.pending[idx].subs[s].bid].bid.clone();
                let candidates = self.candidates_for(&sub);
                self.pending[idx].subs[s].candidates = candidates.iter().map(|c| c.bid).collect();
                if self.pending[idx].subs[s].status == SubStatus::Potential {
                    continue;
                }
                match self.evaluate_sub(node, &sub, &candidates)? {
                    Some(assignment) => {
                        let st = &mut self.pending[idx].subs[s];
                        st.status = SubStatus::Potential;
                        st.assignment = assignment;
                    }
                    None => return Ok(None),
                }
            }
            let mut stale = false;
            for s in 0..self.pending[idx].subs.len() {
                let st = &self.pending[idx].subs[s];
                let sub = &self.bids[&st.bid].bid;
                if !self.assignment_valid(node, sub, &st.assignment) {
                    debug!("{} sub-offer {} lost its coverage", self.pending[idx].id, st.bid);
                    let st = &mut self.pending[idx].subs[s];
                    st.status = SubStatus::Unmatched;
                    st.assignment.clear();
                    stale = true;
                }
            }
            if !stale {
                return Ok(Some(self.commit_block(idx)));
            }
        }
        Ok(None)
    }

    fn commit_block(&mut self, idx: usize) -> Vec<Trade> {
        let pb = self.pending.remove(idx);
        self.round += 1;
        let start = self.ledger.len();
        for st in &pb.subs {
            let sub = self.bids[&st.bid].bid.clone();
            let bi = book_index(sub.direction, sub.period);
            for &(r, q) in &st.assignment {
                let req = &self.bids[&r].bid;
                let price = if req.arrival_index < pb.arrival { req.price } else { sub.price };
                self.execute(Trade {
                    request: r,
                    offer: sub.id,
                    block: Some(pb.id),
                    period: sub.period,
                    direction: sub.direction,
                    quantity: q,
                    clearing_price: price,
                    match_round: self.round,
                });
                self.books[bi].consume(Side::Request, r, q);
            }
        }
        debug!("{} committed in round {}", pb.id, self.round);
        self.ledger[start..].to_vec()
    }

    /// Submits one unit of `bids` by id.
    pub fn submit(&mut self, bids: &BidSet, unit: Submission) -> Result<Vec<Trade>, EngineError> {
        match unit {
            Submission::Single(id) => {
                let bid = bids.bid(id).ok_or(EngineError::UnknownSubmission(id.0))?.clone();
                self.submit_bid(&bid)
            }
            Submission::Block(id) => {
                let block = bids.block(id).ok_or(EngineError::UnknownSubmission(id.0))?.clone();
                let subs = block
                    .sub_offers
                    .iter()
                    .map(|&b| bids.bid(b).cloned().ok_or(EngineError::UnknownSubmission(b.0)))
                    .collect::<Result<Vec<_>, _>>()?;
                self.submit_block(&block, &subs)
            }
        }
    }
}

/// Result of one full continuous run.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRun {
    pub outcome: MarketOutcome,
    pub final_setpoint: Setpoint,
    pub unmatched_blocks: Vec<BlockId>,
}

/// Runs the engine over every submission unit of `bids` in the given order.
/// Arrival indices are reassigned to follow `order`.
pub fn run_sequence(
    network: &Network,
    ptdf: &PtdfMatrix,
    setpoint: &Setpoint,
    bids: &BidSet,
    order: &[Submission],
) -> Result<ContinuousRun, EngineError> {
    let mut expected: Vec<Submission> = bids.submissions_by_arrival();
    let mut given = order.to_vec();
    expected.sort();
    given.sort();
    if expected != given {
        let missing = expected
            .iter()
            .find(|s| !given.contains(s))
            .or_else(|| given.iter().find(|s| !expected.contains(s)))
            .map_or(0, |s| s.raw());
        return Err(EngineError::UnknownSubmission(missing));
    }
    let ordered = bids.with_arrival_order(order);
    let mut engine = EngineState::new(network, ptdf, setpoint)?;
    for &unit in order {
        engine.submit(&ordered, unit)?;
    }
    let unmatched_blocks = engine.pending.iter().map(|p| p.id).collect();
    let final_setpoint = engine.setpoint();
    let outcome = MarketOutcome::from_trades(engine.into_ledger(), &ordered)?;
    Ok(ContinuousRun {
        outcome,
        final_setpoint,
        unmatched_blocks,
    })
}

/// Runs the engine in the bids' own arrival-index order.
pub fn run_in_arrival_order(
    network: &Network,
    ptdf: &PtdfMatrix,
    setpoint: &Setpoint,
    bids: &BidSet,
) -> Result<ContinuousRun, EngineError> {
    run_sequence(network, ptdf, setpoint, bids, &bids.submissions_by_arrival())
}
