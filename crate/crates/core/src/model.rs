//! Domain types shared by every clearing mechanism.
//!
//! Units: quantities are energy per one-hour period (kWh), prices are €/kWh and
//! line limits use the same energy-per-period unit as quantities.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the per-period sum of setpoint injections.
pub const BALANCE_TOL: f64 = 1e-6;

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(BidId, "bid ");
id_type!(BlockId, "block ");
id_type!(NodeId, "node ");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Request,
    Offer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::Up, Direction::Down];

    /// Sign of the injection a matched offer applies at its own node.
    pub fn offer_sign(self) -> f64 {
        match self {
            Direction::Up => 1.0,
            Direction::Down => -1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Direction::Up => 0,
            Direction::Down => 1,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Up => "up",
            Direction::Down => "down",
        })
    }
}

/// A single flexibility request or offer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub id: BidId,
    pub side: Side,
    pub direction: Direction,
    pub node: NodeId,
    pub period: usize,
    pub quantity: f64,
    pub price: f64,
    pub arrival_index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_ref: Option<BlockId>,
}

/// An all-or-nothing bundle of offers at one node, one sub-offer per covered period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockBid {
    pub id: BlockId,
    pub node: NodeId,
    pub sub_offers: Vec<BidId>,
    pub arrival_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: NodeId,
    pub to: NodeId,
    pub susceptance: f64,
    pub limit: f64,
}

/// Limit value that stands for "no thermal limit".
pub const UNLIMITED: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub nodes: Vec<NodeId>,
    pub lines: Vec<Line>,
    pub reference: NodeId,
}

impl Network {
    pub fn index_of(&self, node: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&n| n == node)
    }

    pub fn reference_index(&self) -> Option<usize> {
        self.index_of(self.reference)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_lines(&self) -> usize {
        self.lines.len()
    }

    /// Line endpoints as node indices; `None` if an endpoint is unknown.
    pub fn line_indices(&self) -> Option<Vec<(usize, usize)>> {
        self.lines
            .iter()
            .map(|l| Some((self.index_of(l.from)?, self.index_of(l.to)?)))
            .collect()
    }

    /// Same topology with every line limit lifted.
    pub fn without_limits(&self) -> Network {
        let mut net = self.clone();
        for l in &mut net.lines {
            l.limit = UNLIMITED;
        }
        net
    }

    pub fn is_connected(&self) -> bool {
        let Some(edges) = self.line_indices() else {
            return false;
        };
        let n = self.nodes.len();
        if n == 0 {
            return false;
        }
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Per-period nodal net injections fixed before flexibility trading,
/// indexed `[period][node]` in the network's node order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub injection: Vec<Vec<f64>>,
}

impl Setpoint {
    pub fn zeros(periods: usize, nodes: usize) -> Self {
        Self {
            injection: vec![vec![0.0; nodes]; periods],
        }
    }

    pub fn periods(&self) -> usize {
        self.injection.len()
    }

    pub fn imbalance(&self, period: usize) -> f64 {
        self.injection[period].iter().sum()
    }
}

/// The full bid population of one market run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BidSet {
    pub bids: Vec<Bid>,
    #[serde(default)]
    pub blocks: Vec<BlockBid>,
}

/// One unit of submission: a single bid or a whole block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum Submission {
    Single(BidId),
    Block(BlockId),
}

impl Submission {
    /// Raw numeric id; bid and block ids share one namespace within an instance.
    pub fn raw(self) -> u32 {
        match self {
            Submission::Single(b) => b.0,
            Submission::Block(k) => k.0,
        }
    }
}

impl BidSet {
    pub fn bid(&self, id: BidId) -> Option<&Bid> {
        self.bids.iter().find(|b| b.id == id)
    }

    pub fn block(&self, id: BlockId) -> Option<&BlockBid> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn bid_map(&self) -> HashMap<BidId, &Bid> {
        self.bids.iter().map(|b| (b.id, b)).collect()
    }

    /// Bids that are not sub-offers of a block.
    pub fn singles(&self) -> impl Iterator<Item = &Bid> {
        self.bids.iter().filter(|b| b.block_ref.is_none())
    }

    pub fn requests(&self) -> impl Iterator<Item = &Bid> {
        self.bids.iter().filter(|b| b.side == Side::Request)
    }

    /// Single offers (block sub-offers excluded).
    pub fn single_offers(&self) -> impl Iterator<Item = &Bid> {
        self.bids.iter().filter(|b| b.side == Side::Offer && b.block_ref.is_none())
    }

    pub fn sub_offers<'a>(&'a self, block: &'a BlockBid) -> impl Iterator<Item = &'a Bid> + 'a {
        block.sub_offers.iter().filter_map(move |&id| self.bid(id))
    }

    /// Submission units ordered by arrival index.
    pub fn submissions_by_arrival(&self) -> Vec<Submission> {
        let mut units: Vec<(u64, Submission)> = self
            .singles()
            .map(|b| (b.arrival_index, Submission::Single(b.id)))
            .chain(self.blocks.iter().map(|k| (k.arrival_index, Submission::Block(k.id))))
            .collect();
        units.sort();
        units.into_iter().map(|(_, s)| s).collect()
    }

    pub fn resolve(&self, raw: u32) -> Option<Submission> {
        if self.singles().any(|b| b.id.0 == raw) {
            Some(Submission::Single(BidId(raw)))
        } else if self.blocks.iter().any(|k| k.id.0 == raw) {
            Some(Submission::Block(BlockId(raw)))
        } else {
            None
        }
    }

    /// Splits every block into independent single offers, each getting a fresh arrival index.
    pub fn without_blocks(&self) -> BidSet {
        let mut next = self
            .bids
            .iter()
            .map(|b| b.arrival_index)
            .chain(self.blocks.iter().map(|k| k.arrival_index))
            .max()
            .map_or(0, |m| m + 1);
        let mut bids = self.bids.clone();
        for b in bids.iter_mut() {
            if b.block_ref.take().is_some() {
                b.arrival_index = next;
                next += 1;
            }
        }
        BidSet { bids, blocks: Vec::new() }
    }

    /// Reassigns arrival indices so that `order` is the submission order.
    pub fn with_arrival_order(&self, order: &[Submission]) -> BidSet {
        let mut out = self.clone();
        let rank: HashMap<Submission, u64> = order.iter().enumerate().map(|(i, s)| (*s, i as u64)).collect();
        for k in out.blocks.iter_mut() {
            k.arrival_index = rank[&Submission::Block(k.id)];
        }
        let block_rank: HashMap<BlockId, u64> = out.blocks.iter().map(|k| (k.id, k.arrival_index)).collect();
        for b in out.bids.iter_mut() {
            b.arrival_index = match b.block_ref {
                Some(k) => block_rank[&k],
                None => rank[&Submission::Single(b.id)],
            };
        }
        out
    }
}

/// Network, setpoint and bids of one market run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub network: Network,
    pub setpoint: Setpoint,
    pub bids: BidSet,
}

impl Instance {
    pub fn validate(&self) -> ValidationReport {
        validate_instance(&self.network, &self.setpoint, &self.bids)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub request: BidId,
    /// The single offer, or the block sub-offer, on the other side.
    pub offer: BidId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<BlockId>,
    pub period: usize,
    pub direction: Direction,
    pub quantity: f64,
    pub clearing_price: f64,
    pub match_round: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MarketOutcome {
    pub trades: Vec<Trade>,
    pub social_welfare: f64,
    pub volume: f64,
    /// Total accepted quantity per request and per single offer.
    pub accepted: BTreeMap<BidId, f64>,
    /// Acceptance ratio per block (0 or 1).
    pub block_acceptance: BTreeMap<BlockId, f64>,
}

impl MarketOutcome {
    /// Builds the acceptance totals, volume and welfare from a trade ledger.
    pub fn from_trades(trades: Vec<Trade>, bids: &BidSet) -> Result<Self, ModelError> {
        let mut accepted: BTreeMap<BidId, f64> = BTreeMap::new();
        let mut block_acceptance: BTreeMap<BlockId, f64> = bids.blocks.iter().map(|k| (k.id, 0.0)).collect();
        for t in &trades {
            *accepted.entry(t.request).or_default() += t.quantity;
            match t.block {
                Some(k) => {
                    block_acceptance.insert(k, 1.0);
                }
                None => *accepted.entry(t.offer).or_default() += t.quantity,
            }
        }
        let volume = trades.iter().map(|t| t.quantity).sum();
        let mut outcome = MarketOutcome {
            trades,
            social_welfare: 0.0,
            volume,
            accepted,
            block_acceptance,
        };
        outcome.social_welfare = social_welfare(&outcome, bids)?;
        Ok(outcome)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown {0}")]
    UnknownBid(BidId),
    #[error("unknown {0}")]
    UnknownBlock(BlockId),
    #[error("node {0} is not in the network")]
    UnknownNode(NodeId),
}

/// Setpoint after a trade ledger: upward trades inject at the offer node and withdraw
/// at the request node, downward trades the reverse.
pub fn apply_trades(network: &Network, setpoint: &Setpoint, bids: &BidSet, trades: &[Trade]) -> Result<Setpoint, ModelError> {
    let map = bids.bid_map();
    let node = |id: BidId| -> Result<usize, ModelError> {
        let b = map.get(&id).ok_or(ModelError::UnknownBid(id))?;
        network.index_of(b.node).ok_or(ModelError::UnknownNode(b.node))
    };
    let mut out = setpoint.clone();
    for t in trades {
        let (o, r) = (node(t.offer)?, node(t.request)?);
        let q = t.direction.offer_sign() * t.quantity;
        out.injection[t.period][o] += q;
        out.injection[t.period][r] -= q;
    }
    Ok(out)
}

/// Welfare of accepted quantities at submitted prices: request value minus single-offer
/// cost minus the full sub-offer cost of every accepted block.
pub fn social_welfare(outcome: &MarketOutcome, bids: &BidSet) -> Result<f64, ModelError> {
    let map = bids.bid_map();
    let mut welfare = 0.0;
    for (&id, &q) in &outcome.accepted {
        let bid = map.get(&id).ok_or(ModelError::UnknownBid(id))?;
        match bid.side {
            Side::Request => welfare += bid.price * q,
            Side::Offer => welfare -= bid.price * q,
        }
    }
    for (&k, &ar) in &outcome.block_acceptance {
        let block = bids.block(k).ok_or(ModelError::UnknownBlock(k))?;
        if ar == 0.0 {
            continue;
        }
        let mut cost = 0.0;
        for &b in &block.sub_offers {
            let sub = map.get(&b).ok_or(ModelError::UnknownBid(b))?;
            cost += sub.price * sub.quantity;
        }
        welfare -= ar * cost;
    }
    Ok(welfare)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, subject: impl fmt::Display, message: impl Into<String>) {
        self.violations.push(Violation {
            subject: subject.to_string(),
            message: message.into(),
        });
    }

    pub fn has(&self, message: &str) -> bool {
        self.violations.iter().any(|v| v.message == message)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{}: {}", v.subject, v.message)?;
        }
        Ok(())
    }
}

/// Lists every violated type invariant of an instance; empty iff well-formed.
pub fn validate_instance(network: &Network, setpoint: &Setpoint, bids: &BidSet) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut node_ids = HashSet::new();
    for &n in &network.nodes {
        if !node_ids.insert(n) {
            report.push(n, "duplicate node id");
        }
    }
    if network.index_of(network.reference).is_none() {
        report.push("network", "reference node does not exist");
    }
    for (i, l) in network.lines.iter().enumerate() {
        let subject = format!("line {i}");
        if network.index_of(l.from).is_none() || network.index_of(l.to).is_none() {
            report.push(&subject, "line endpoint does not exist");
        }
        if l.from == l.to {
            report.push(&subject, "line connects a node to itself");
        }
        if !(l.susceptance > 0.0) || !l.susceptance.is_finite() {
            report.push(&subject, "non-positive susceptance");
        }
        if !(l.limit >= 0.0) {
            report.push(&subject, "negative line limit");
        }
    }
    if !network.is_connected() {
        report.push("network", "network is not connected");
    }

    let periods = setpoint.periods();
    for (t, row) in setpoint.injection.iter().enumerate() {
        if row.len() != network.num_nodes() {
            report.push(format!("setpoint period {t}"), "setpoint row length differs from node count");
            continue;
        }
        if row.iter().any(|v| !v.is_finite()) {
            report.push(format!("setpoint period {t}"), "non-finite injection");
        } else if setpoint.imbalance(t).abs() > BALANCE_TOL {
            report.push(format!("setpoint period {t}"), "unbalanced setpoint");
        }
    }

    let mut ids = HashSet::new();
    let mut arrivals: HashMap<u64, String> = HashMap::new();
    for b in &bids.bids {
        if !ids.insert(b.id.0) {
            report.push(b.id, "duplicate id");
        }
        if !(b.quantity >= 0.0) || !b.quantity.is_finite() {
            report.push(b.id, "negative quantity");
        }
        if !(b.price >= 0.0) || !b.price.is_finite() {
            report.push(b.id, "negative price");
        }
        if b.period >= periods {
            report.push(b.id, "period outside horizon");
        }
        if network.index_of(b.node).is_none() {
            report.push(b.id, "unknown node");
        }
        match b.block_ref {
            Some(k) => {
                if b.side != Side::Offer {
                    report.push(b.id, "only offers may belong to a block");
                }
                match bids.block(k) {
                    None => report.push(b.id, "block reference does not exist"),
                    Some(block) => {
                        if !block.sub_offers.contains(&b.id) {
                            report.push(b.id, "block does not list this sub-offer");
                        }
                    }
                }
            }
            None => {
                if let Some(prev) = arrivals.insert(b.arrival_index, b.id.to_string()) {
                    report.push(b.id, format!("arrival index shared with {prev}"));
                }
            }
        }
    }
    for k in &bids.blocks {
        if !ids.insert(k.id.0) {
            report.push(k.id, "duplicate id");
        }
        if let Some(prev) = arrivals.insert(k.arrival_index, k.id.to_string()) {
            report.push(k.id, format!("arrival index shared with {prev}"));
        }
        if k.sub_offers.len() < 2 {
            report.push(k.id, "block needs ≥2 sub-offers");
        }
        let mut periods_seen = HashSet::new();
        for &b in &k.sub_offers {
            let Some(sub) = bids.bid(b) else {
                report.push(k.id, format!("sub-offer {b} does not exist"));
                continue;
            };
            if sub.block_ref != Some(k.id) {
                report.push(k.id, format!("sub-offer {b} does not reference the block"));
            }
            if sub.node != k.node {
                report.push(k.id, format!("sub-offer {b} is at a different node"));
            }
            if sub.arrival_index != k.arrival_index {
                report.push(k.id, format!("sub-offer {b} has a different arrival index"));
            }
            if !periods_seen.insert(sub.period) {
                report.push(k.id, "sub-offer periods are not distinct");
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> Network {
        Network {
            nodes: vec![NodeId(1), NodeId(2)],
            lines: vec![Line {
                from: NodeId(1),
                to: NodeId(2),
                susceptance: 1.0,
                limit: 5.0,
            }],
            reference: NodeId(1),
        }
    }

    fn bid(id: u32, side: Side, dir: Direction, period: usize, quantity: f64, price: f64, arrival: u64) -> Bid {
        Bid {
            id: BidId(id),
            side,
            direction: dir,
            node: NodeId(2),
            period,
            quantity,
            price,
            arrival_index: arrival,
            block_ref: None,
        }
    }

    #[test]
    fn negative_quantity_is_reported() {
        let bids = BidSet {
            bids: vec![bid(1, Side::Request, Direction::Up, 0, -1.0, 0.3, 0)],
            blocks: vec![],
        };
        let report = validate_instance(&two_node(), &Setpoint::zeros(1, 2), &bids);
        assert!(report.has("negative quantity"));
    }

    #[test]
    fn single_sub_offer_block_is_reported() {
        let mut sub = bid(2, Side::Offer, Direction::Up, 0, 5.0, 0.02, 7);
        sub.block_ref = Some(BlockId(9));
        let bids = BidSet {
            bids: vec![sub],
            blocks: vec![BlockBid {
                id: BlockId(9),
                node: NodeId(2),
                sub_offers: vec![BidId(2)],
                arrival_index: 7,
            }],
        };
        let report = validate_instance(&two_node(), &Setpoint::zeros(1, 2), &bids);
        assert!(report.has("block needs ≥2 sub-offers"));
    }

    #[test]
    fn unbalanced_setpoint_is_reported() {
        let mut sp = Setpoint::zeros(4, 2);
        sp.injection[3] = vec![1.0, -0.5];
        let report = validate_instance(&two_node(), &sp, &BidSet::default());
        assert_eq!(report.violations.len(), 1);
        assert!(report.has("unbalanced setpoint"));
        assert_eq!(report.violations[0].subject, "setpoint period 3");
    }

    #[test]
    fn request_in_block_and_duplicate_arrival_are_reported() {
        let mut r = bid(1, Side::Request, Direction::Up, 0, 1.0, 0.3, 0);
        r.block_ref = Some(BlockId(5));
        let o = bid(2, Side::Offer, Direction::Up, 0, 1.0, 0.03, 3);
        let o2 = bid(3, Side::Offer, Direction::Up, 0, 1.0, 0.03, 3);
        let bids = BidSet {
            bids: vec![r, o, o2],
            blocks: vec![],
        };
        let report = validate_instance(&two_node(), &Setpoint::zeros(1, 2), &bids);
        assert!(report.has("only offers may belong to a block"));
        assert!(report.violations.iter().any(|v| v.message.starts_with("arrival index shared")));
    }

    #[test]
    fn well_formed_instance_has_no_violations() {
        let bids = BidSet {
            bids: vec![
                bid(1, Side::Request, Direction::Up, 0, 8.0, 0.28, 0),
                bid(2, Side::Offer, Direction::Up, 0, 10.0, 0.03, 1),
            ],
            blocks: vec![],
        };
        assert!(validate_instance(&two_node(), &Setpoint::zeros(1, 2), &bids).is_ok());
    }

    fn single_trade_outcome(q: f64, req: f64, off: f64) -> (MarketOutcome, BidSet) {
        let bids = BidSet {
            bids: vec![
                bid(1, Side::Request, Direction::Up, 0, 10.0, req, 0),
                bid(2, Side::Offer, Direction::Up, 0, 10.0, off, 1),
            ],
            blocks: vec![],
        };
        let trade = Trade {
            request: BidId(1),
            offer: BidId(2),
            block: None,
            period: 0,
            direction: Direction::Up,
            quantity: q,
            clearing_price: req,
            match_round: 1,
        };
        (MarketOutcome::from_trades(vec![trade], &bids).unwrap(), bids)
    }

    #[test]
    fn welfare_of_single_trade() {
        let (outcome, bids) = single_trade_outcome(8.0, 0.28, 0.03);
        assert!((social_welfare(&outcome, &bids).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(outcome.volume, 8.0);
    }

    #[test]
    fn welfare_of_empty_and_equal_price_outcomes() {
        assert_eq!(social_welfare(&MarketOutcome::default(), &BidSet::default()).unwrap(), 0.0);
        let (outcome, _) = single_trade_outcome(4.0, 0.04, 0.04);
        assert_eq!(outcome.social_welfare, 0.0);
        assert_eq!(outcome.volume, 4.0);
    }

    #[test]
    fn welfare_ignores_clearing_price() {
        let (mut outcome, bids) = single_trade_outcome(8.0, 0.28, 0.03);
        let before = social_welfare(&outcome, &bids).unwrap();
        outcome.trades[0].clearing_price = 99.0;
        assert_eq!(social_welfare(&outcome, &bids).unwrap(), before);
    }

    #[test]
    fn welfare_rejects_unknown_bid() {
        let mut outcome = MarketOutcome::default();
        outcome.accepted.insert(BidId(77), 1.0);
        assert_eq!(
            social_welfare(&outcome, &BidSet::default()),
            Err(ModelError::UnknownBid(BidId(77)))
        );
    }

    #[test]
    fn block_costs_are_subtracted_in_both_directions() {
        let mut up = bid(10, Side::Offer, Direction::Up, 0, 5.0, 0.02, 4);
        let mut down = bid(11, Side::Offer, Direction::Down, 1, 5.0, 0.03, 4);
        up.block_ref = Some(BlockId(20));
        down.block_ref = Some(BlockId(20));
        let bids = BidSet {
            bids: vec![
                bid(1, Side::Request, Direction::Up, 0, 5.0, 0.30, 0),
                bid(2, Side::Request, Direction::Down, 1, 5.0, 0.045, 1),
                up,
                down,
            ],
            blocks: vec![BlockBid {
                id: BlockId(20),
                node: NodeId(2),
                sub_offers: vec![BidId(10), BidId(11)],
                arrival_index: 4,
            }],
        };
        let mut outcome = MarketOutcome::default();
        outcome.accepted.insert(BidId(1), 5.0);
        outcome.accepted.insert(BidId(2), 5.0);
        outcome.block_acceptance.insert(BlockId(20), 1.0);
        let expected = 5.0 * 0.30 + 5.0 * 0.045 - 5.0 * 0.02 - 5.0 * 0.03;
        assert!((social_welfare(&outcome, &bids).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn splitting_blocks_gives_unique_arrivals() {
        let mut up = bid(10, Side::Offer, Direction::Up, 0, 5.0, 0.02, 4);
        let mut down = bid(11, Side::Offer, Direction::Down, 1, 5.0, 0.03, 4);
        up.block_ref = Some(BlockId(20));
        down.block_ref = Some(BlockId(20));
        let bids = BidSet {
            bids: vec![bid(1, Side::Request, Direction::Up, 0, 5.0, 0.30, 0), up, down],
            blocks: vec![BlockBid {
                id: BlockId(20),
                node: NodeId(2),
                sub_offers: vec![BidId(10), BidId(11)],
                arrival_index: 4,
            }],
        };
        let split = bids.without_blocks();
        assert!(split.blocks.is_empty());
        assert!(split.bids.iter().all(|b| b.block_ref.is_none()));
        let mut sp = Setpoint::zeros(2, 2);
        sp.injection[0] = vec![0.0, 0.0];
        assert!(validate_instance(&two_node(), &sp, &split).is_ok());
    }
}
