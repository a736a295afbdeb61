//! Independent market oracles: from-scratch DC flows, trade application,
//! network and all-or-nothing checks, and an acceptance-enumeration auction.
#![allow(dead_code)]

use std::collections::HashMap;

use flexclear_core::model::{
    Bid, BidId, BidSet, BlockBid, BlockId, Direction, Instance, Line, MarketOutcome, Network, NodeId, Setpoint, Side,
    Trade,
};
use flexclear_core::optimize::{solve_lp, LinearProgram, RowBound, Sense, SolveStatus, VarId};
use rand::seq::SliceRandom;
use rand::Rng;

use super::solver::oracle::solve_dense;

/// Dense inverse of the reduced susceptance matrix, built by Gaussian elimination.
pub struct DcOracle {
    pub network: Network,
    index: HashMap<NodeId, usize>,
    /// `x[n][m]`: angle at node n per unit injection at node m (reference row and column zero).
    x: Vec<Vec<f64>>,
}

impl DcOracle {
    pub fn new(network: &Network) -> Self {
        let n = network.nodes.len();
        let index: HashMap<NodeId, usize> = network.nodes.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let r = index[&network.reference];
        let mut b = vec![vec![0.0; n]; n];
        for l in &network.lines {
            let (i, j) = (index[&l.from], index[&l.to]);
            b[i][i] += l.susceptance;
            b[j][j] += l.susceptance;
            b[i][j] -= l.susceptance;
            b[j][i] -= l.susceptance;
        }
        let keep: Vec<usize> = (0..n).filter(|&i| i != r).collect();
        let reduced: Vec<Vec<f64>> = keep.iter().map(|&i| keep.iter().map(|&j| b[i][j]).collect()).collect();
        let mut x = vec![vec![0.0; n]; n];
        for (c, &m) in keep.iter().enumerate() {
            let mut e = vec![0.0; keep.len()];
            e[c] = 1.0;
            let col = solve_dense(reduced.clone(), e).expect("connected network");
            for (k, &i) in keep.iter().enumerate() {
                x[i][m] = col[k];
            }
        }
        Self {
            network: network.clone(),
            index,
            x,
        }
    }

    pub fn node(&self, id: NodeId) -> usize {
        self.index[&id]
    }

    pub fn flows(&self, injection: &[f64]) -> Vec<f64> {
        let theta: Vec<f64> = self
            .x
            .iter()
            .map(|row| row.iter().zip(injection).map(|(a, b)| a * b).sum())
            .collect();
        self.network
            .lines
            .iter()
            .map(|l| l.susceptance * (theta[self.index[&l.from]] - theta[self.index[&l.to]]))
            .collect()
    }
}

/// Offer side injects for upward trades and the request side withdraws; downward is mirrored.
pub fn apply_trades(dc: &DcOracle, setpoint: &Setpoint, bids: &BidSet, trades: &[Trade]) -> Vec<Vec<f64>> {
    let node: HashMap<BidId, usize> = bids.bids.iter().map(|b| (b.id, dc.node(b.node))).collect();
    let mut inj = setpoint.injection.clone();
    for t in trades {
        let s = match t.direction {
            Direction::Up => 1.0,
            Direction::Down => -1.0,
        };
        inj[t.period][node[&t.offer]] += s * t.quantity;
        inj[t.period][node[&t.request]] -= s * t.quantity;
    }
    inj
}

/// No line ends above max(limit, |initial flow|) by more than `tol`.
pub fn check_network(dc: &DcOracle, setpoint: &Setpoint, bids: &BidSet, trades: &[Trade], tol: f64) -> Result<(), String> {
    let after = apply_trades(dc, setpoint, bids, trades);
    for (t, (before, after)) in setpoint.injection.iter().zip(&after).enumerate() {
        let f0 = dc.flows(before);
        let f1 = dc.flows(after);
        for (l, line) in dc.network.lines.iter().enumerate() {
            let cap = line.limit.max(f0[l].abs());
            if f1[l].abs() > cap + tol {
                return Err(format!(
                    "period {t} line {l}: |{}| > max({}, |{}|)",
                    f1[l], line.limit, f0[l]
                ));
            }
        }
    }
    Ok(())
}

/// Every block is accepted entirely or not at all.
pub fn check_aon(outcome: &MarketOutcome, bids: &BidSet) -> Result<(), String> {
    for k in &bids.blocks {
        let ar = outcome.block_acceptance.get(&k.id).copied().unwrap_or(0.0);
        if ar != 0.0 && ar != 1.0 {
            return Err(format!("block {} has acceptance {ar}", k.id));
        }
        for &sub in &k.sub_offers {
            let q = bids.bid(sub).unwrap().quantity;
            let got: f64 = outcome.trades.iter().filter(|t| t.offer == sub).map(|t| t.quantity).sum();
            let bad = if ar == 0.0 {
                outcome.trades.iter().any(|t| t.offer == sub || t.block == Some(k.id))
            } else {
                (got - q).abs() > 1e-9 * q.max(1.0)
            };
            if bad {
                return Err(format!("block {} sub-offer {sub}: {got} of {q} with acceptance {ar}", k.id));
            }
        }
    }
    Ok(())
}

fn sign(d: Direction) -> f64 {
    match d {
        Direction::Up => 1.0,
        Direction::Down => -1.0,
    }
}

/// Welfare of the best block acceptance vector, each solved as an angle-based LP.
/// `None` when no acceptance vector is feasible.
pub fn auction_by_enumeration(inst: &Instance) -> Option<f64> {
    let dc = DcOracle::new(&inst.network);
    let net = &inst.network;
    let n = net.nodes.len();
    let periods = inst.setpoint.periods();
    let r = dc.node(net.reference);
    let caps: Vec<Vec<f64>> = inst
        .setpoint
        .injection
        .iter()
        .map(|inj| {
            dc.flows(inj)
                .iter()
                .zip(&net.lines)
                .map(|(f, l)| l.limit.max(f.abs()))
                .collect()
        })
        .collect();
    let singles: Vec<&Bid> = inst.bids.bids.iter().filter(|b| b.block_ref.is_none()).collect();
    let blocks = &inst.bids.blocks;
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << blocks.len()) {
        let on = |k: usize| mask & (1 << k) != 0;
        let mut lp = LinearProgram::new(Sense::Maximize);
        let vars: Vec<VarId> = singles
            .iter()
            .map(|b| {
                let v = lp.add_continuous(format!("p{}", b.id.0), 0.0, b.quantity);
                let c = if b.side == Side::Request { b.price } else { -b.price };
                lp.set_objective(v, c);
                v
            })
            .collect();
        let theta: Vec<Vec<VarId>> = (0..periods)
            .map(|t| {
                (0..n)
                    .map(|i| {
                        if i == r {
                            lp.add_continuous(format!("th{t}_{i}"), 0.0, 0.0)
                        } else {
                            lp.add_continuous(format!("th{t}_{i}"), f64::NEG_INFINITY, f64::INFINITY)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut block_cost = 0.0;
        let mut fixed_dir = HashMap::new();
        let mut fixed_node = vec![vec![0.0; n]; periods];
        for (_, block) in blocks.iter().enumerate().filter(|&(k, _)| on(k)) {
            for sub in inst.bids.sub_offers(block) {
                block_cost += sub.price * sub.quantity;
                *fixed_dir.entry((sub.direction, sub.period)).or_insert(0.0) += sub.quantity;
                fixed_node[sub.period][dc.node(block.node)] += sign(sub.direction) * sub.quantity;
            }
        }
        lp.objective_offset = -block_cost;
        for d in [Direction::Up, Direction::Down] {
            for t in 0..periods {
                let terms: Vec<(VarId, f64)> = singles
                    .iter()
                    .zip(&vars)
                    .filter(|(b, _)| b.direction == d && b.period == t)
                    .map(|(b, &v)| (v, if b.side == Side::Request { 1.0 } else { -1.0 }))
                    .collect();
                let rhs = fixed_dir.get(&(d, t)).copied().unwrap_or(0.0);
                if terms.is_empty() && rhs == 0.0 {
                    continue;
                }
                lp.add_constraint(format!("dir{t}"), terms, RowBound::Eq(rhs));
            }
        }
        for t in 0..periods {
            let mut rows: Vec<Vec<(VarId, f64)>> = vec![Vec::new(); n];
            for l in &net.lines {
                let (a, b) = (dc.node(l.from), dc.node(l.to));
                rows[a].push((theta[t][a], l.susceptance));
                rows[a].push((theta[t][b], -l.susceptance));
                rows[b].push((theta[t][b], l.susceptance));
                rows[b].push((theta[t][a], -l.susceptance));
            }
            for (b, &v) in singles.iter().zip(&vars).filter(|(b, _)| b.period == t) {
                let s = sign(b.direction) * if b.side == Side::Offer { 1.0 } else { -1.0 };
                rows[dc.node(b.node)].push((v, -s));
            }
            for (i, terms) in rows.into_iter().enumerate() {
                let rhs = inst.setpoint.injection[t][i] + fixed_node[t][i];
                lp.add_constraint(format!("bal{t}_{i}"), terms, RowBound::Eq(rhs));
            }
            for (l, line) in net.lines.iter().enumerate() {
                let (a, b) = (dc.node(line.from), dc.node(line.to));
                let cap = caps[t][l];
                lp.add_constraint(
                    format!("line{t}_{l}"),
                    vec![(theta[t][a], line.susceptance), (theta[t][b], -line.susceptance)],
                    RowBound::Range(-cap, cap),
                );
            }
        }
        let res = solve_lp(&lp).expect("oracle LP solves");
        if res.status == SolveStatus::Optimal && best.is_none_or(|w| res.objective > w) {
            best = Some(res.objective);
        }
    }
    best
}

/// Connected network of 2..=5 nodes, 1..=3 periods (2..=3 when blocks are drawn),
/// a random balanced setpoint and up to `max_blocks` block bids.
pub fn random_small_instance(rng: &mut impl Rng, max_blocks: usize) -> Instance {
    let n = rng.gen_range(2..=5);
    let nodes: Vec<NodeId> = (1..=n as u32).map(NodeId).collect();
    let mut lines = Vec::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        lines.push(Line {
            from: nodes[j],
            to: nodes[i],
            susceptance: rng.gen_range(2..=20) as f64,
            limit: rng.gen_range(2..=15) as f64,
        });
    }
    if n >= 3 && rng.gen_bool(0.5) {
        let (a, b) = (0, n - 1);
        if !lines.iter().any(|l| (l.from, l.to) == (nodes[a], nodes[b])) {
            lines.push(Line {
                from: nodes[a],
                to: nodes[b],
                susceptance: rng.gen_range(2..=20) as f64,
                limit: rng.gen_range(2..=15) as f64,
            });
        }
    }
    let n_blocks = rng.gen_range(0..=max_blocks);
    let periods = if n_blocks > 0 { rng.gen_range(2..=3) } else { rng.gen_range(1..=3) };
    let injection = (0..periods)
        .map(|_| {
            let mut row: Vec<f64> = (0..n).map(|_| rng.gen_range(-8..=8) as f64).collect();
            row[0] = 0.0;
            row[0] = -row.iter().sum::<f64>();
            row
        })
        .collect();
    let mut id = 1u32;
    let mut arrival = 0u64;
    let mut bids = Vec::new();
    let next_bid = |rng: &mut dyn rand::RngCore, side: Side, arrival: u64, id: u32, period: usize| Bid {
        id: BidId(id),
        side,
        direction: if rng.gen_bool(0.5) { Direction::Up } else { Direction::Down },
        node: nodes[rng.gen_range(0..n)],
        period,
        quantity: rng.gen_range(1..=12) as f64,
        price: match side {
            Side::Request => rng.gen_range(20..=40) as f64 / 100.0,
            Side::Offer => rng.gen_range(2..=25) as f64 / 100.0,
        },
        arrival_index: arrival,
        block_ref: None,
    };
    for _ in 0..rng.gen_range(1..=6) {
        let t = rng.gen_range(0..periods);
        bids.push(next_bid(rng, Side::Request, arrival, id, t));
        id += 1;
        arrival += 1;
    }
    for _ in 0..rng.gen_range(0..=5) {
        let t = rng.gen_range(0..periods);
        bids.push(next_bid(rng, Side::Offer, arrival, id, t));
        id += 1;
        arrival += 1;
    }
    let mut blocks = Vec::new();
    for _ in 0..n_blocks {
        let block_id = BlockId(id);
        id += 1;
        let node = nodes[rng.gen_range(0..n)];
        let mut ts: Vec<usize> = (0..periods).collect();
        ts.shuffle(rng);
        let span = rng.gen_range(2..=periods);
        let mut subs = Vec::new();
        for &t in &ts[..span] {
            let mut b = next_bid(rng, Side::Offer, arrival, id, t);
            b.node = node;
            b.price = rng.gen_range(1..=20) as f64 / 100.0;
            b.quantity = rng.gen_range(1..=6) as f64;
            b.block_ref = Some(block_id);
            subs.push(b.id);
            bids.push(b);
            id += 1;
        }
        blocks.push(BlockBid {
            id: block_id,
            node,
            sub_offers: subs,
            arrival_index: arrival,
        });
        arrival += 1;
    }
    // Shuffle arrival so requests and offers interleave.
    let mut inst = Instance {
        network: Network {
            nodes: nodes.clone(),
            lines,
            reference: nodes[0],
        },
        setpoint: Setpoint { injection },
        bids: BidSet { bids, blocks },
    };
    let mut order = inst.bids.submissions_by_arrival();
    order.shuffle(rng);
    inst.bids = inst.bids.with_arrival_order(&order);
    inst
}
