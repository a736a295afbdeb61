use super::*;
use crate::fixtures::five_bus_bounds;
use crate::model::{Bid, Line, NodeId, UNLIMITED};
use crate::powerflow::compute_ptdf;

fn toy(offers: &[(u32, f64, f64)]) -> (Network, PtdfMatrix, Setpoint, BidSet) {
    let net = Network {
        nodes: vec![NodeId(1), NodeId(2)],
        lines: vec![Line {
            from: NodeId(1),
            to: NodeId(2),
            susceptance: 10.0,
            limit: UNLIMITED,
        }],
        reference: NodeId(1),
    };
    let ptdf = compute_ptdf(&net).unwrap();
    let mut bids = vec![Bid {
        id: BidId(1),
        side: Side::Request,
        direction: Direction::Up,
        node: NodeId(2),
        period: 0,
        quantity: 10.0,
        price: 0.30,
        arrival_index: 0,
        block_ref: None,
    }];
    for &(id, q, p) in offers {
        bids.push(Bid {
            id: BidId(id),
            side: Side::Offer,
            node: NodeId(1),
            quantity: q,
            price: p,
            arrival_index: id as u64,
            ..bids[0].clone()
        });
    }
    (net, ptdf, Setpoint::zeros(1, 2), BidSet { bids, blocks: vec![] })
}

fn solve(net: &Network, ptdf: &PtdfMatrix, sp: &Setpoint, bids: &BidSet, sense: BoundSense) -> BoundValue {
    let p = SequenceProblem::new(net, ptdf, sp, bids, sense).unwrap();
    reformulate_and_solve(&p, &EmbeddedSolver, &BoundsOptions::default()).unwrap()
}

#[test]
fn two_offer_toy_bounds() {
    let (net, ptdf, sp, bids) = toy(&[(2, 10.0, 0.05), (3, 10.0, 0.10)]);
    let best = solve(&net, &ptdf, &sp, &bids, BoundSense::Best);
    let worst = solve(&net, &ptdf, &sp, &bids, BoundSense::Worst);
    assert!(best.relaxation_tight && worst.relaxation_tight);
    assert!((best.value() - 2.5).abs() < 1e-6, "{best:?}");
    assert!((worst.value() - 2.0).abs() < 1e-6, "{worst:?}");
    assert_eq!(best.witness[0], Submission::Single(BidId(2)));
    assert_eq!(worst.witness[0], Submission::Single(BidId(3)));

    let oracle = permutation_oracle(&net, &ptdf, &sp, &bids, 6).unwrap();
    assert_eq!(oracle.table.len(), 2);
    assert!((oracle.min - 2.0).abs() < 1e-9 && (oracle.max - 2.5).abs() < 1e-9);
}

#[test]
fn single_offer_has_one_sequence() {
    let (net, ptdf, sp, bids) = toy(&[(2, 6.0, 0.05)]);
    let best = solve(&net, &ptdf, &sp, &bids, BoundSense::Best);
    let worst = solve(&net, &ptdf, &sp, &bids, BoundSense::Worst);
    assert!((best.value() - worst.value()).abs() < 1e-9);
    assert!((best.value() - 6.0 * 0.25).abs() < 1e-6);
}

#[test]
fn identical_offers_are_order_independent() {
    let (net, ptdf, sp, bids) = toy(&[(2, 4.0, 0.05), (3, 4.0, 0.05), (4, 4.0, 0.05)]);
    let oracle = permutation_oracle(&net, &ptdf, &sp, &bids, 6).unwrap();
    assert_eq!(oracle.table.len(), 6);
    assert!((oracle.max - oracle.min).abs() < 1e-12);
}

#[test]
fn oracle_refuses_too_many_offers() {
    let (net, ptdf, sp, bids) = toy(&[(2, 1.0, 0.05), (3, 1.0, 0.05), (4, 1.0, 0.05)]);
    assert!(matches!(
        permutation_oracle(&net, &ptdf, &sp, &bids, 2),
        Err(BoundsError::TooManyOffers { units: 3, max: 2 })
    ));
}

fn first_round(offers: &[(u32, f64, f64)], pick: usize) -> (LinearProgram, Vec<VarId>) {
    let (net, ptdf, sp, bids) = toy(offers);
    let p = SequenceProblem::new(&net, &ptdf, &sp, &bids, BoundSense::Best).unwrap();
    let mut lp = LinearProgram::new(Sense::Maximize);
    let m = p.rounds();
    let s: Vec<Vec<VarId>> = (0..m).map(|i| (0..m).map(|u| lp.add_binary(format!("s{i}{u}"))).collect()).collect();
    let ll = build_lower_level(&mut lp, &p, 0, &s, &[]);
    let mut values = vec![0.0; lp.num_vars()];
    values[s[0][pick].0] = 1.0;
    ll.as_program(&lp, &values)
}

#[test]
fn round_one_clears_the_submitted_offer() {
    let (lp, _) = first_round(&[(2, 10.0, 0.05), (3, 10.0, 0.10)], 0);
    let r = crate::optimize::solve_lp(&lp).unwrap();
    assert!((r.objective - 2.5).abs() < 1e-9);
}

#[test]
fn round_one_with_unprofitable_offer_is_empty() {
    let (lp, _) = first_round(&[(2, 10.0, 0.50)], 0);
    let r = crate::optimize::solve_lp(&lp).unwrap();
    assert!(r.objective.abs() < 1e-12);
    assert!(r.values.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn closed_gate_blocks_unsubmitted_offers() {
    // Offer 3 is submitted; offer 2 is cheaper but its gate is closed.
    let (lp, own) = first_round(&[(2, 10.0, 0.05), (3, 10.0, 0.10)], 1);
    let r = crate::optimize::solve_lp(&lp).unwrap();
    assert!((r.objective - 2.0).abs() < 1e-9);
    assert_eq!(own.len(), 3);
    assert_eq!(r.values[1], 0.0);
}

#[test]
fn five_bus_fixture_bounds_match_oracle() {
    let inst = five_bus_bounds();
    assert!(inst.validate().is_ok(), "{}", inst.validate());
    let ptdf = compute_ptdf(&inst.network).unwrap();
    let oracle = permutation_oracle(&inst.network, &ptdf, &inst.setpoint, &inst.bids, 6).unwrap();
    assert_eq!(oracle.table.len(), 6);
    assert!((oracle.min - 4.8).abs() < 1e-9, "{oracle:?}");
    assert!((oracle.max - 7.7).abs() < 1e-9, "{oracle:?}");

    let report = bounds_report(
        &inst.network,
        &ptdf,
        &inst.setpoint,
        &inst.bids,
        &[BoundSense::Worst, BoundSense::Best],
        &BoundsOptions::default(),
    )
    .unwrap();
    let worst = report.worst.unwrap();
    let best = report.best.unwrap();
    assert!(worst.relaxation_tight && best.relaxation_tight);
    assert!((worst.value() - oracle.min).abs() < 1e-6, "{worst:?}");
    assert!((best.value() - oracle.max).abs() < 1e-6, "{best:?}");
    assert!((report.auction_welfare - 7.7).abs() < 1e-6);
}

#[test]
fn fixed_sequences_reproduce_the_engine() {
    let inst = five_bus_bounds();
    let ptdf = compute_ptdf(&inst.network).unwrap();
    let oracle = permutation_oracle(&inst.network, &ptdf, &inst.setpoint, &inst.bids, 6).unwrap();
    let p = SequenceProblem::new(&inst.network, &ptdf, &inst.setpoint, &inst.bids, BoundSense::Best).unwrap();
    for (perm, w) in &oracle.table {
        let eval = evaluate_sequence(&p, perm, &EmbeddedSolver, &MilpOptions::default()).unwrap();
        assert!(eval.relaxation_tight);
        assert!((eval.welfare - w).abs() < 1e-6, "{perm:?}: {} vs {w}", eval.welfare);
    }
}
