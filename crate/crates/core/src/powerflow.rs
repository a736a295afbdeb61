//! DC power flow: PTDF factors, angle-based flow solves and the largest
//! network-feasible match quantity.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{Direction, Network, BALANCE_TOL};

/// Sensitivities below this magnitude are treated as zero.
pub const SENSITIVITY_TOL: f64 = 1e-9;
/// Slack allowed on line limits and balance checks, in energy units.
pub const FLOW_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerflowError {
    #[error("network is not connected")]
    Disconnected,
    #[error("network data is inconsistent: {0}")]
    BadNetwork(String),
    #[error("reduced susceptance matrix is singular")]
    Singular,
    #[error("injections in period {period} are unbalanced by {imbalance}")]
    Unbalanced { period: usize, imbalance: f64 },
    #[error("line {line} already violates its limit ({flow} vs {limit})")]
    LimitViolated { line: usize, flow: f64, limit: f64 },
}

/// Line-flow sensitivity to an injection at each node, withdrawn at the reference node.
#[derive(Debug, Clone, PartialEq)]
pub struct PtdfMatrix {
    lines: usize,
    nodes: usize,
    entries: Vec<f64>,
}

impl PtdfMatrix {
    pub fn get(&self, line: usize, node: usize) -> f64 {
        self.entries[line * self.nodes + node]
    }

    pub fn row(&self, line: usize) -> &[f64] {
        &self.entries[line * self.nodes..(line + 1) * self.nodes]
    }

    pub fn num_lines(&self) -> usize {
        self.lines
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes
    }

    /// Line flows caused by a balanced injection vector.
    pub fn flows(&self, injection: &[f64]) -> Vec<f64> {
        (0..self.lines)
            .map(|l| self.row(l).iter().zip(injection).map(|(a, p)| a * p).sum())
            .collect()
    }

    /// Flow change on `line` per unit of a match between `offer` and `request` nodes.
    pub fn match_sensitivity(&self, line: usize, offer: usize, request: usize, direction: Direction) -> f64 {
        direction.offer_sign() * (self.get(line, offer) - self.get(line, request))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    /// `[period][line]`, positive from `from` to `to`.
    pub flows: Vec<Vec<f64>>,
    /// `[period][node]` voltage angles in radians.
    pub angles: Vec<Vec<f64>>,
}

/// Factorised reduced susceptance matrix of one network.
pub struct DcModel {
    edges: Vec<(usize, usize)>,
    susceptance: Vec<f64>,
    reference: usize,
    /// Maps node index to its row in the reduced system (`None` for the reference).
    reduced: Vec<Option<usize>>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DcModel {
    pub fn new(network: &Network) -> Result<Self, PowerflowError> {
        let edges = network
            .line_indices()
            .ok_or_else(|| PowerflowError::BadNetwork("line endpoint does not exist".into()))?;
        let reference = network
            .reference_index()
            .ok_or_else(|| PowerflowError::BadNetwork("reference node does not exist".into()))?;
        if network.lines.iter().any(|l| !(l.susceptance > 0.0)) {
            return Err(PowerflowError::BadNetwork("non-positive susceptance".into()));
        }
        if !network.is_connected() {
            return Err(PowerflowError::Disconnected);
        }
        let n = network.num_nodes();
        let mut reduced = vec![None; n];
        let mut k = 0;
        for (i, r) in reduced.iter_mut().enumerate() {
            if i != reference {
                *r = Some(k);
                k += 1;
            }
        }
        let mut b = DMatrix::<f64>::zeros(n - 1, n - 1);
        for (&(a, c), line) in edges.iter().zip(&network.lines) {
            let s = line.susceptance;
            if let Some(ra) = reduced[a] {
                b[(ra, ra)] += s;
            }
            if let Some(rc) = reduced[c] {
                b[(rc, rc)] += s;
            }
            if let (Some(ra), Some(rc)) = (reduced[a], reduced[c]) {
                b[(ra, rc)] -= s;
                b[(rc, ra)] -= s;
            }
        }
        let lu = b.lu();
        if n > 1 && !lu.is_invertible() {
            return Err(PowerflowError::Singular);
        }
        Ok(Self {
            edges,
            susceptance: network.lines.iter().map(|l| l.susceptance).collect(),
            reference,
            reduced,
            lu,
        })
    }

    fn angles(&self, injection: &[f64]) -> Result<Vec<f64>, PowerflowError> {
        let n = injection.len();
        let mut rhs = DVector::<f64>::zeros(n - 1);
        for (i, &p) in injection.iter().enumerate() {
            if let Some(r) = self.reduced[i] {
                rhs[r] = p;
            }
        }
        let sol = if n > 1 {
            self.lu.solve(&rhs).ok_or(PowerflowError::Singular)?
        } else {
            rhs
        };
        Ok((0..n)
            .map(|i| self.reduced[i].map_or(0.0, |r| sol[r]))
            .collect())
    }

    fn line_flows(&self, angles: &[f64]) -> Vec<f64> {
        self.edges
            .iter()
            .zip(&self.susceptance)
            .map(|(&(a, c), &s)| s * (angles[a] - angles[c]))
            .collect()
    }

    /// Solves flows and angles for every period of `injections` (`[period][node]`).
    pub fn solve(&self, injections: &[Vec<f64>]) -> Result<FlowState, PowerflowError> {
        let mut flows = Vec::with_capacity(injections.len());
        let mut angles = Vec::with_capacity(injections.len());
        for (t, inj) in injections.iter().enumerate() {
            let imbalance: f64 = inj.iter().sum();
            if imbalance.abs() > BALANCE_TOL {
                return Err(PowerflowError::Unbalanced { period: t, imbalance });
            }
            let theta = self.angles(inj)?;
            flows.push(self.line_flows(&theta));
            angles.push(theta);
        }
        Ok(FlowState { flows, angles })
    }

    pub fn ptdf(&self) -> Result<PtdfMatrix, PowerflowError> {
        let n = self.reduced.len();
        let lines = self.edges.len();
        // Column k of the inverse gives the angles for a unit injection at node k.
        let mut entries = vec![0.0; lines * n];
        for k in 0..n {
            if k == self.reference {
                continue;
            }
            let mut unit = vec![0.0; n];
            unit[k] = 1.0;
            let theta = self.angles(&unit)?;
            for (l, f) in self.line_flows(&theta).into_iter().enumerate() {
                entries[l * n + k] = f;
            }
        }
        Ok(PtdfMatrix { lines, nodes: n, entries })
    }
}

pub fn compute_ptdf(network: &Network) -> Result<PtdfMatrix, PowerflowError> {
    DcModel::new(network)?.ptdf()
}

pub fn solve_flows(network: &Network, injections: &[Vec<f64>]) -> Result<FlowState, PowerflowError> {
    DcModel::new(network)?.solve(injections)
}

/// How a match treats lines that are already above their limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverloadPolicy {
    /// Any existing violation is an error.
    Reject,
    /// An overloaded line may carry its current |flow| but no more.
    NoWorsen,
}

/// Largest `q` in `[0, q_cap]` such that the match's injection pattern (+q at the offer
/// node and -q at the request node for upward flexibility, mirrored for downward) keeps
/// every line of one period inside its limit.
#[allow(clippy::too_many_arguments)]
pub fn quantity_max_in(
    flows: &[f64],
    network: &Network,
    ptdf: &PtdfMatrix,
    offer_node: usize,
    request_node: usize,
    direction: Direction,
    q_cap: f64,
    policy: OverloadPolicy,
) -> Result<f64, PowerflowError> {
    if q_cap <= 0.0 {
        return Ok(0.0);
    }
    let mut q = q_cap;
    for (l, (line, &f)) in network.lines.iter().zip(flows).enumerate() {
        let cap = match policy {
            OverloadPolicy::Reject => {
                if f.abs() > line.limit + FLOW_TOL {
                    return Err(PowerflowError::LimitViolated {
                        line: l,
                        flow: f,
                        limit: line.limit,
                    });
                }
                line.limit
            }
            OverloadPolicy::NoWorsen => line.limit.max(f.abs()),
        };
        let sigma = ptdf.match_sensitivity(l, offer_node, request_node, direction);
        if sigma.abs() <= SENSITIVITY_TOL {
            continue;
        }
        let headroom = if sigma > 0.0 { cap - f } else { cap + f };
        q = q.min((headroom / sigma.abs()).max(0.0));
    }
    Ok(q)
}

/// [`quantity_max_in`] for one period of a solved flow state, rejecting pre-existing violations.
#[allow(clippy::too_many_arguments)]
pub fn quantity_max(
    state: &FlowState,
    network: &Network,
    ptdf: &PtdfMatrix,
    offer_node: usize,
    request_node: usize,
    direction: Direction,
    period: usize,
    q_cap: f64,
) -> Result<f64, PowerflowError> {
    quantity_max_in(
        &state.flows[period],
        network,
        ptdf,
        offer_node,
        request_node,
        direction,
        q_cap,
        OverloadPolicy::Reject,
    )
}

/// Per-line limit a state may not exceed: the thermal limit, or the initial flow
/// magnitude where that is already larger.
pub fn effective_limits(network: &Network, initial_flows: &[f64]) -> Vec<f64> {
    network
        .lines
        .iter()
        .zip(initial_flows)
        .map(|(l, f)| l.limit.max(f.abs()))
        .collect()
}

/// Largest amount by which any flow exceeds `limits`.
pub fn max_excess(flows: &[f64], limits: &[f64]) -> f64 {
    flows
        .iter()
        .zip(limits)
        .map(|(f, lim)| f.abs() - lim)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Line, NodeId};

    fn line(from: u32, to: u32, s: f64, limit: f64) -> Line {
        Line {
            from: NodeId(from),
            to: NodeId(to),
            susceptance: s,
            limit,
        }
    }

    fn chain(limit: f64) -> Network {
        Network {
            nodes: vec![NodeId(1), NodeId(2), NodeId(3)],
            lines: vec![line(1, 2, 1.0, limit), line(2, 3, 1.0, limit)],
            reference: NodeId(1),
        }
    }

    fn two_node(limit: f64) -> Network {
        Network {
            nodes: vec![NodeId(1), NodeId(2)],
            lines: vec![line(1, 2, 1.0, limit)],
            reference: NodeId(1),
        }
    }

    #[test]
    fn reference_column_is_zero_and_reference_injection_gives_no_flow() {
        let net = chain(10.0);
        let ptdf = compute_ptdf(&net).unwrap();
        for l in 0..2 {
            assert_eq!(ptdf.get(l, 0), 0.0);
        }
        assert_eq!(ptdf.flows(&[0.0, 0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn single_line_carries_unit_injection() {
        let ptdf = compute_ptdf(&two_node(5.0)).unwrap();
        // injection at node 2 flows back to the reference, against the 1->2 orientation
        assert!((ptdf.get(0, 1) + 1.0).abs() < 1e-12);
        let flows = ptdf.flows(&[-1.0, 1.0]);
        assert!((flows[0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn series_path_carries_full_transfer() {
        let state = solve_flows(&chain(10.0), &[vec![4.0, 0.0, -4.0]]).unwrap();
        assert!((state.flows[0][0] - 4.0).abs() < 1e-12);
        assert!((state.flows[0][1] - 4.0).abs() < 1e-12);
        assert_eq!(state.angles[0][0], 0.0);
    }

    #[test]
    fn zero_injections_give_zero_state() {
        let state = solve_flows(&chain(10.0), &[vec![0.0; 3], vec![0.0; 3]]).unwrap();
        assert!(state.flows.iter().flatten().all(|&f| f == 0.0));
        assert!(state.angles.iter().flatten().all(|&a| a == 0.0));
    }

    #[test]
    fn unbalanced_injections_are_rejected() {
        let err = solve_flows(&chain(10.0), &[vec![1.0, 0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, PowerflowError::Unbalanced { period: 0, .. }));
    }

    #[test]
    fn disconnected_network_is_rejected() {
        let net = Network {
            nodes: vec![NodeId(1), NodeId(2), NodeId(3)],
            lines: vec![line(1, 2, 1.0, 1.0)],
            reference: NodeId(1),
        };
        assert_eq!(compute_ptdf(&net).unwrap_err(), PowerflowError::Disconnected);
    }

    #[test]
    fn meshed_flows_match_ptdf() {
        let net = Network {
            nodes: (1..=4).map(NodeId).collect(),
            lines: vec![
                line(1, 2, 2.0, 10.0),
                line(2, 3, 1.0, 10.0),
                line(3, 4, 3.0, 10.0),
                line(4, 1, 1.5, 10.0),
                line(1, 3, 0.5, 10.0),
            ],
            reference: NodeId(2),
        };
        let inj = vec![vec![1.5, -2.0, 3.0, -2.5]];
        let state = solve_flows(&net, &inj).unwrap();
        let via_ptdf = compute_ptdf(&net).unwrap().flows(&inj[0]);
        for (a, b) in state.flows[0].iter().zip(via_ptdf) {
            assert!((a - b).abs() < 1e-10);
        }
        // nodal balance: injection equals net outflow
        let edges = net.line_indices().unwrap();
        for n in 0..4 {
            let out: f64 = edges
                .iter()
                .zip(&state.flows[0])
                .map(|(&(a, b), f)| if a == n { *f } else if b == n { -f } else { 0.0 })
                .sum();
            assert!((out - inj[0][n]).abs() < 1e-10);
        }
    }

    #[test]
    fn quantity_max_on_two_node_line() {
        let net = two_node(5.0);
        let ptdf = compute_ptdf(&net).unwrap();
        let state = solve_flows(&net, &[vec![0.0, 0.0]]).unwrap();
        let q = quantity_max(&state, &net, &ptdf, 1, 0, Direction::Up, 0, 10.0).unwrap();
        assert!((q - 5.0).abs() < 1e-12);
    }

    #[test]
    fn quantity_max_same_node_is_cap() {
        let net = two_node(0.0);
        let ptdf = compute_ptdf(&net).unwrap();
        let state = solve_flows(&net, &[vec![0.0, 0.0]]).unwrap();
        let q = quantity_max(&state, &net, &ptdf, 1, 1, Direction::Down, 0, 7.5).unwrap();
        assert_eq!(q, 7.5);
    }

    #[test]
    fn quantity_max_zero_cap_and_unlimited_lines() {
        let net = chain(1e12);
        let ptdf = compute_ptdf(&net).unwrap();
        let state = solve_flows(&net, &[vec![0.0; 3]]).unwrap();
        assert_eq!(quantity_max(&state, &net, &ptdf, 2, 0, Direction::Up, 0, 0.0).unwrap(), 0.0);
        assert_eq!(quantity_max(&state, &net, &ptdf, 2, 0, Direction::Up, 0, 123.0).unwrap(), 123.0);
    }

    #[test]
    fn existing_violation_is_reported_or_not_worsened() {
        let net = two_node(5.0);
        let ptdf = compute_ptdf(&net).unwrap();
        let state = solve_flows(&net, &[vec![8.0, -8.0]]).unwrap();
        let err = quantity_max(&state, &net, &ptdf, 1, 0, Direction::Up, 0, 3.0).unwrap_err();
        assert!(matches!(err, PowerflowError::LimitViolated { line: 0, .. }));
        // flow is +8 (1 -> 2); an up match offered at node 2 for a request at node 1 relieves it
        let relieve = quantity_max_in(&state.flows[0], &net, &ptdf, 1, 0, Direction::Up, 20.0, OverloadPolicy::NoWorsen).unwrap();
        assert!((relieve - 16.0).abs() < 1e-12);
        let worsen = quantity_max_in(&state.flows[0], &net, &ptdf, 0, 1, Direction::Up, 20.0, OverloadPolicy::NoWorsen).unwrap();
        assert_eq!(worsen, 0.0);
    }
}
