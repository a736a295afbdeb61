//! Dense bounded-variable primal simplex.
//!
//! Every row `lo <= a.x <= hi` is written as `y - a.x = 0` with a bounded row
//! activity `y`, so ranged rows, equalities and one-sided rows all reduce to
//! variable bounds. Rows whose starting activity is out of range get a phase-1
//! artificial.

use super::program::{LinearProgram, Sense};
use super::{SolveResult, SolveStatus};

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-7;
const BLAND_AFTER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable parked at zero.
    Free,
}

enum Step {
    Optimal,
    Unbounded,
    Limit,
}

struct Tableau {
    rows: usize,
    cols: usize,
    t: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    d: Vec<f64>,
    x: Vec<f64>,
    status: Vec<Status>,
    basis: Vec<usize>,
    /// Columns that may never enter again (artificials after phase 1).
    frozen: Vec<bool>,
    iterations: usize,
    max_iterations: usize,
    degenerate_run: usize,
    nz: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.cols + j]
    }

    fn recompute_reduced_costs(&mut self) {
        self.d.copy_from_slice(&self.cost);
        for i in 0..self.rows {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.cols..(i + 1) * self.cols];
                for (dj, &tij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
    }

    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.cols {
            if self.frozen[j] {
                continue;
            }
            let dj = self.d[j];
            let dir = match self.status[j] {
                Status::Basic => continue,
                Status::AtLower if dj < -OPT_TOL && self.upper[j] > self.lower[j] => 1.0,
                Status::AtUpper if dj > OPT_TOL && self.upper[j] > self.lower[j] => -1.0,
                Status::Free if dj.abs() > OPT_TOL => -dj.signum(),
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            let score = dj.abs();
            if score > best_score {
                best_score = score;
                best = Some((j, dir));
            }
        }
        best
    }

    /// Two-pass Harris ratio test. Returns the step length and the leaving row
    /// (`None` for a bound flip of the entering column).
    fn ratio_test(&self, j: usize, dir: f64, bland: bool) -> Option<(f64, Option<(usize, bool)>)> {
        let span = self.upper[j] - self.lower[j];
        let mut theta_max = f64::INFINITY;
        for i in 0..self.rows {
            let alpha = self.at(i, j) * dir;
            let b = self.basis[i];
            if alpha > PIVOT_TOL {
                if self.lower[b].is_finite() {
                    theta_max = theta_max.min((self.x[b] - self.lower[b] + FEAS_TOL) / alpha);
                }
            } else if alpha < -PIVOT_TOL && self.upper[b].is_finite() {
                theta_max = theta_max.min((self.upper[b] - self.x[b] + FEAS_TOL) / -alpha);
            }
        }
        if span.is_finite() && span <= theta_max {
            return Some((span, None));
        }
        if theta_max == f64::INFINITY {
            return None;
        }
        let mut chosen: Option<(usize, bool, f64, f64)> = None;
        for i in 0..self.rows {
            let alpha = self.at(i, j) * dir;
            let b = self.basis[i];
            let (ratio, to_lower) = if alpha > PIVOT_TOL && self.lower[b].is_finite() {
                ((self.x[b] - self.lower[b]) / alpha, true)
            } else if alpha < -PIVOT_TOL && self.upper[b].is_finite() {
                ((self.upper[b] - self.x[b]) / -alpha, false)
            } else {
                continue;
            };
            if ratio > theta_max {
                continue;
            }
            let ratio = ratio.max(0.0);
            let better = match chosen {
                None => true,
                Some((ci, _, cr, ca)) => {
                    if bland {
                        ratio < cr - 1e-12 || (ratio <= cr + 1e-12 && b < self.basis[ci])
                    } else {
                        alpha.abs() > ca
                    }
                }
            };
            if better {
                chosen = Some((i, to_lower, ratio, alpha.abs()));
            }
        }
        chosen.map(|(i, to_lower, ratio, _)| (ratio, Some((i, to_lower))))
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let piv = self.t[r * cols + j];
        let inv = 1.0 / piv;
        self.nz.clear();
        for k in 0..cols {
            let v = self.t[r * cols + k];
            if v != 0.0 {
                self.t[r * cols + k] = v * inv;
                self.nz.push(k);
            }
        }
        self.t[r * cols + j] = 1.0;
        let (before, rest) = self.t.split_at_mut(r * cols);
        let (prow, after) = rest.split_at_mut(cols);
        for row in before.chunks_exact_mut(cols).chain(after.chunks_exact_mut(cols)) {
            let f = row[j];
            if f != 0.0 {
                for &k in &self.nz {
                    row[k] -= f * prow[k];
                }
                row[j] = 0.0;
            }
        }
        let f = self.d[j];
        if f != 0.0 {
            for &k in &self.nz {
                self.d[k] -= f * prow[k];
            }
            self.d[j] = 0.0;
        }
        self.basis[r] = j;
    }

    fn run(&mut self) -> Step {
        loop {
            if self.iterations >= self.max_iterations {
                return Step::Limit;
            }
            let bland = self.degenerate_run >= BLAND_AFTER;
            let Some((j, dir)) = self.choose_entering(bland) else {
                return Step::Optimal;
            };
            let Some((theta, leave)) = self.ratio_test(j, dir, bland) else {
                return Step::Unbounded;
            };
            self.iterations += 1;
            if theta <= 1e-12 {
                self.degenerate_run += 1;
            } else {
                self.degenerate_run = 0;
            }
            if theta > 0.0 {
                for i in 0..self.rows {
                    let a = self.at(i, j);
                    if a != 0.0 {
                        let b = self.basis[i];
                        self.x[b] -= a * dir * theta;
                    }
                }
            }
            match leave {
                None => {
                    if dir > 0.0 {
                        self.x[j] = self.upper[j];
                        self.status[j] = Status::AtUpper;
                    } else {
                        self.x[j] = self.lower[j];
                        self.status[j] = Status::AtLower;
                    }
                }
                Some((r, to_lower)) => {
                    let leaving = self.basis[r];
                    self.x[j] += dir * theta;
                    if to_lower {
                        self.x[leaving] = self.lower[leaving];
                        self.status[leaving] = Status::AtLower;
                    } else {
                        self.x[leaving] = self.upper[leaving];
                        self.status[leaving] = Status::AtUpper;
                    }
                    self.pivot(r, j);
                    self.status[j] = Status::Basic;
                }
            }
        }
    }

    /// Moves basic artificials at level zero out of the basis where a
    /// non-artificial column can replace them.
    fn drive_out_artificials(&mut self, first_art: usize) {
        for r in 0..self.rows {
            if self.basis[r] < first_art {
                continue;
            }
            let mut best = None;
            let mut best_abs = 1e-7;
            for k in 0..first_art {
                if self.status[k] == Status::Basic {
                    continue;
                }
                let a = self.at(r, k).abs();
                if a > best_abs {
                    best_abs = a;
                    best = Some(k);
                }
            }
            if let Some(k) = best {
                let art = self.basis[r];
                self.pivot(r, k);
                self.status[k] = Status::Basic;
                self.status[art] = Status::AtLower;
                self.x[art] = 0.0;
            }
        }
    }
}

/// Solves the continuous relaxation of `lp`, ignoring integrality and using
/// the supplied variable bounds.
pub(crate) fn solve_with_bounds(lp: &LinearProgram, lower: &[f64], upper: &[f64]) -> SolveResult {
    let n = lp.num_vars();
    let m = lp.num_constraints();
    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };

    for j in 0..n {
        if lower[j] > upper[j] + FEAS_TOL {
            return SolveResult::status_only(SolveStatus::Infeasible, n, m);
        }
    }

    let mut x0 = vec![0.0; n];
    let mut st0 = vec![Status::Free; n];
    for j in 0..n {
        if lower[j].is_finite() {
            x0[j] = lower[j];
            st0[j] = Status::AtLower;
        } else if upper[j].is_finite() {
            x0[j] = upper[j];
            st0[j] = Status::AtUpper;
        }
    }

    // Row activities at the starting point decide which rows need artificials.
    let mut activity = vec![0.0; m];
    let mut row_lo = vec![0.0; m];
    let mut row_hi = vec![0.0; m];
    let mut needs_art = Vec::new();
    for (i, c) in lp.constraints.iter().enumerate() {
        activity[i] = c.activity(&x0);
        let (lo, hi) = c.bound.interval();
        row_lo[i] = lo;
        row_hi[i] = hi;
        if activity[i] < lo - FEAS_TOL || activity[i] > hi + FEAS_TOL {
            needs_art.push(i);
        }
    }

    let n_art = needs_art.len();
    let cols = n + m + n_art;
    let mut tab = Tableau {
        rows: m,
        cols,
        t: vec![0.0; m * cols],
        lower: Vec::with_capacity(cols),
        upper: Vec::with_capacity(cols),
        cost: vec![0.0; cols],
        d: vec![0.0; cols],
        x: vec![0.0; cols],
        status: Vec::with_capacity(cols),
        basis: vec![0; m],
        frozen: vec![false; cols],
        iterations: 0,
        max_iterations: 50_000 + 50 * (n + m),
        degenerate_run: 0,
        nz: Vec::with_capacity(cols),
    };
    tab.lower.extend_from_slice(lower);
    tab.upper.extend_from_slice(upper);
    tab.lower.extend_from_slice(&row_lo);
    tab.upper.extend_from_slice(&row_hi);
    tab.lower.extend(std::iter::repeat(0.0).take(n_art));
    tab.upper.extend(std::iter::repeat(f64::INFINITY).take(n_art));
    tab.status.extend_from_slice(&st0);
    tab.status.extend(std::iter::repeat(Status::Basic).take(m));
    tab.status.extend(std::iter::repeat(Status::Basic).take(n_art));
    tab.x[..n].copy_from_slice(&x0);

    for (i, c) in lp.constraints.iter().enumerate() {
        for &(v, a) in &c.terms {
            tab.t[i * cols + v.0] -= a;
        }
        tab.t[i * cols + n + i] = 1.0;
        tab.basis[i] = n + i;
        tab.x[n + i] = activity[i];
    }
    for (k, &i) in needs_art.iter().enumerate() {
        let art = n + m + k;
        let y = n + i;
        let (target, st) = if activity[i] > row_hi[i] {
            (row_hi[i], Status::AtUpper)
        } else {
            (row_lo[i], Status::AtLower)
        };
        let sigma = if activity[i] > target { 1.0 } else { -1.0 };
        tab.status[y] = st;
        tab.x[y] = target;
        tab.x[art] = (activity[i] - target).abs();
        tab.basis[i] = art;
        tab.status[art] = Status::Basic;
        // Row: -a.x + y + sigma*art = 0, normalised so the basic artificial has coefficient 1.
        tab.t[i * cols + art] = sigma;
        for k2 in 0..cols {
            tab.t[i * cols + k2] *= sigma;
        }
        tab.cost[art] = 1.0;
    }

    if n_art > 0 {
        tab.recompute_reduced_costs();
        match tab.run() {
            Step::Limit => return SolveResult::status_only(SolveStatus::IterationLimit, n, m),
            Step::Unbounded | Step::Optimal => {}
        }
        let infeas: f64 = (n + m..cols).map(|a| tab.x[a]).sum();
        if infeas > PHASE1_TOL {
            return SolveResult::status_only(SolveStatus::Infeasible, n, m);
        }
        for a in n + m..cols {
            tab.upper[a] = 0.0;
            tab.frozen[a] = true;
            tab.cost[a] = 0.0;
            if tab.status[a] != Status::Basic {
                tab.status[a] = Status::AtLower;
                tab.x[a] = 0.0;
            }
        }
        tab.drive_out_artificials(n + m);
        tab.degenerate_run = 0;
    }

    for j in 0..n {
        tab.cost[j] = sign * lp.objective[j];
    }
    tab.recompute_reduced_costs();
    match tab.run() {
        Step::Optimal => {}
        Step::Unbounded => return SolveResult::status_only(SolveStatus::Unbounded, n, m),
        Step::Limit => return SolveResult::status_only(SolveStatus::IterationLimit, n, m),
    }

    let mut values: Vec<f64> = tab.x[..n].to_vec();
    for j in 0..n {
        values[j] = values[j].clamp(lower[j], upper[j]);
    }
    let duals = (0..m)
        .map(|i| if tab.status[n + i] == Status::Basic { 0.0 } else { sign * tab.d[n + i] })
        .collect();
    let reduced_costs = (0..n)
        .map(|j| if tab.status[j] == Status::Basic { 0.0 } else { sign * tab.d[j] })
        .collect();
    let objective = lp.objective_value(&values);
    SolveResult {
        status: SolveStatus::Optimal,
        values,
        objective,
        duals: Some(duals),
        reduced_costs: Some(reduced_costs),
        best_bound: objective,
        nodes: 0,
        iterations: tab.iterations,
    }
}
