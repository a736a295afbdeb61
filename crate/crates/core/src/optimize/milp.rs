use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::program::{LinearProgram, Sense, VarKind};
use super::simplex::solve_with_bounds;
use super::{SolveResult, SolveStatus};

const INT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct MilpOptions {
    /// Relative optimality gap (absolute below magnitude 1) at which the search stops.
    pub gap_tol: f64,
    pub node_limit: usize,
    /// Optional known feasible point used as the starting incumbent.
    pub incumbent: Option<Vec<f64>>,
}

impl Default for MilpOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-9,
            node_limit: 200_000,
            incumbent: None,
        }
    }
}

struct Node {
    /// LP bound in minimisation form.
    bound: f64,
    seq: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    values: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn most_fractional(lp: &LinearProgram, values: &[f64]) -> Option<usize> {
    let mut best = None;
    let mut best_dist = f64::INFINITY;
    for (j, v) in lp.variables.iter().enumerate() {
        if v.kind != VarKind::Binary {
            continue;
        }
        let frac = values[j] - values[j].floor();
        if frac < INT_TOL || frac > 1.0 - INT_TOL {
            continue;
        }
        let dist = (frac - 0.5).abs();
        if dist < best_dist - 1e-12 {
            best_dist = dist;
            best = Some(j);
        }
    }
    best
}

/// Fixes the binaries of an integral LP point and re-solves for clean continuous values.
fn polish(lp: &LinearProgram, lower: &[f64], upper: &[f64], values: &[f64]) -> Option<SolveResult> {
    let mut lo = lower.to_vec();
    let mut hi = upper.to_vec();
    for (j, v) in lp.variables.iter().enumerate() {
        if v.kind == VarKind::Binary {
            let r = values[j].round();
            lo[j] = r;
            hi[j] = r;
        }
    }
    let res = solve_with_bounds(lp, &lo, &hi);
    res.is_optimal().then_some(res)
}

fn is_feasible_point(lp: &LinearProgram, x: &[f64]) -> bool {
    x.len() == lp.num_vars()
        && lp.max_violation(x) <= 1e-6
        && lp
            .variables
            .iter()
            .zip(x)
            .all(|(v, &val)| v.kind != VarKind::Binary || (val - val.round()).abs() <= INT_TOL)
}

pub(crate) fn branch_and_bound(lp: &LinearProgram, options: &MilpOptions) -> SolveResult {
    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let root_lower: Vec<f64> = lp.variables.iter().map(|v| v.lower).collect();
    let root_upper: Vec<f64> = lp.variables.iter().map(|v| v.upper).collect();

    let mut incumbent: Option<Vec<f64>> = None;
    let mut incumbent_obj = f64::INFINITY;
    if let Some(x) = &options.incumbent {
        if is_feasible_point(lp, x) {
            incumbent_obj = sign * lp.objective_value(x);
            incumbent = Some(x.clone());
        }
    }

    let gap_ok = |bound: f64, inc: f64| inc - bound <= options.gap_tol * inc.abs().max(1.0);

    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    let mut nodes = 0usize;
    let mut iterations = 0usize;

    let root = solve_with_bounds(lp, &root_lower, &root_upper);
    nodes += 1;
    iterations += root.iterations;
    match root.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible | SolveStatus::Unbounded | SolveStatus::IterationLimit => {
            let mut r = SolveResult::status_only(root.status, 0, 0);
            if root.status == SolveStatus::IterationLimit || root.status == SolveStatus::Infeasible {
                if let Some(x) = incumbent {
                    r.objective = lp.objective_value(&x);
                    r.values = x;
                }
            }
            r.nodes = nodes;
            return r;
        }
    }
    heap.push(Node {
        bound: sign * root.objective,
        seq,
        lower: root_lower,
        upper: root_upper,
        values: root.values,
    });
    seq += 1;

    let mut limit_hit = false;
    while let Some(node) = heap.pop() {
        if incumbent.is_some() && gap_ok(node.bound, incumbent_obj) {
            heap.clear();
            break;
        }
        let Some(j) = most_fractional(lp, &node.values) else {
            if let Some(res) = polish(lp, &node.lower, &node.upper, &node.values) {
                iterations += res.iterations;
                let obj = sign * res.objective;
                if obj < incumbent_obj {
                    incumbent_obj = obj;
                    incumbent = Some(res.values);
                }
            }
            continue;
        };
        if nodes >= options.node_limit {
            heap.push(node);
            limit_hit = true;
            break;
        }
        for fixed in [0.0, 1.0] {
            let mut lower = node.lower.clone();
            let mut upper = node.upper.clone();
            lower[j] = fixed;
            upper[j] = fixed;
            let res = solve_with_bounds(lp, &lower, &upper);
            nodes += 1;
            iterations += res.iterations;
            if !res.is_optimal() {
                continue;
            }
            let bound = sign * res.objective;
            if incumbent.is_some() && gap_ok(bound, incumbent_obj) {
                continue;
            }
            heap.push(Node {
                bound,
                seq,
                lower,
                upper,
                values: res.values,
            });
            seq += 1;
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let status = if limit_hit {
        SolveStatus::IterationLimit
    } else if incumbent.is_some() {
        SolveStatus::Optimal
    } else {
        SolveStatus::Infeasible
    };
    let mut result = SolveResult::status_only(status, 0, 0);
    result.nodes = nodes;
    result.iterations = iterations;
    if let Some(x) = incumbent {
        result.objective = lp.objective_value(&x);
        result.values = x;
        result.best_bound = sign * open_bound.min(incumbent_obj);
    } else if limit_hit {
        result.best_bound = sign * open_bound;
    }
    result
}
