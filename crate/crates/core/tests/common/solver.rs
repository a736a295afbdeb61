//! Brute-force solver oracles and random program generators for tests.
#![allow(dead_code)]

use flexclear_core::optimize::{LinearProgram, RowBound, Sense, VarId};
use rand::Rng;

pub mod oracle {
    //! Brute-force reference solvers used only by tests.
    use flexclear_core::optimize::{LinearProgram, RowBound, Sense, VarKind};

    /// Gaussian elimination with partial pivoting; `None` when singular.
    pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[piv][col].abs() < 1e-10 {
                return None;
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        Some(x)
    }

    fn combinations(n: usize, k: usize, out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, start: usize) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            combinations(n, k, out, cur, i + 1);
            cur.pop();
        }
    }

    /// Optimal objective of a box-bounded LP by enumerating every basic solution.
    /// `None` means infeasible.
    pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
        let n = lp.num_vars();
        let rows: Vec<(Vec<f64>, f64, f64)> = lp
            .constraints
            .iter()
            .map(|c| {
                let mut a = vec![0.0; n];
                for &(v, coef) in &c.terms {
                    a[v.0] += coef;
                }
                let (lo, hi) = c.bound.interval();
                (a, lo, hi)
            })
            .collect();
        let mut best: Option<f64> = None;
        // Each variable is at its lower bound, its upper bound, or free (basic).
        let total = 3usize.pow(n as u32);
        for code in 0..total {
            let mut state = vec![0u8; n];
            let mut c = code;
            for s in state.iter_mut() {
                *s = (c % 3) as u8;
                c /= 3;
            }
            let free: Vec<usize> = (0..n).filter(|&j| state[j] == 2).collect();
            let k = free.len();
            if k > rows.len() {
                continue;
            }
            let mut subsets = Vec::new();
            combinations(rows.len(), k, &mut subsets, &mut Vec::new(), 0);
            for subset in subsets {
                // each chosen row is tight at one of its finite sides
                let sides = 1usize << k;
                for side_mask in 0..sides {
                    let mut fixed = vec![0.0; n];
                    for j in 0..n {
                        fixed[j] = match state[j] {
                            0 => lp.variables[j].lower,
                            1 => lp.variables[j].upper,
                            _ => 0.0,
                        };
                    }
                    let mut a = Vec::with_capacity(k);
                    let mut b = Vec::with_capacity(k);
                    let mut ok = true;
                    for (idx, &r) in subset.iter().enumerate() {
                        let (coef, lo, hi) = &rows[r];
                        let rhs = if side_mask & (1 << idx) == 0 { *lo } else { *hi };
                        if !rhs.is_finite() {
                            ok = false;
                            break;
                        }
                        let fixed_part: f64 = (0..n).filter(|j| state[*j] != 2).map(|j| coef[j] * fixed[j]).sum();
                        a.push(free.iter().map(|&j| coef[j]).collect::<Vec<_>>());
                        b.push(rhs - fixed_part);
                    }
                    if !ok {
                        continue;
                    }
                    let sol = if k == 0 { Some(vec![]) } else { solve_dense(a, b) };
                    let Some(sol) = sol else { continue };
                    let mut x = fixed.clone();
                    for (i, &j) in free.iter().enumerate() {
                        x[j] = sol[i];
                    }
                    if lp.max_violation(&x) > 1e-7 {
                        continue;
                    }
                    let obj = lp.objective_value(&x);
                    best = Some(match (best, lp.sense) {
                        (None, _) => obj,
                        (Some(b), Sense::Minimize) => b.min(obj),
                        (Some(b), Sense::Maximize) => b.max(obj),
                    });
                }
            }
        }
        best
    }

    /// Optimal objective of a pure-binary program by enumerating all assignments.
    pub fn binary_enumeration(lp: &LinearProgram) -> Option<f64> {
        let n = lp.num_vars();
        assert!(lp.variables.iter().all(|v| v.kind == VarKind::Binary));
        let mut best: Option<f64> = None;
        for mask in 0u32..(1 << n) {
            let x: Vec<f64> = (0..n).map(|j| ((mask >> j) & 1) as f64).collect();
            if lp.max_violation(&x) > 1e-9 {
                continue;
            }
            let obj = lp.objective_value(&x);
            best = Some(match (best, lp.sense) {
                (None, _) => obj,
                (Some(b), Sense::Minimize) => b.min(obj),
                (Some(b), Sense::Maximize) => b.max(obj),
            });
        }
        best
    }

    #[allow(dead_code)]
    pub fn row(lo: f64, hi: f64) -> RowBound {
        RowBound::Range(lo, hi)
    }
}

pub fn random_lp(rng: &mut impl Rng) -> LinearProgram {
    let n = rng.gen_range(1..=6);
    let m = rng.gen_range(1..=6);
    let sense = if rng.gen_bool(0.5) { Sense::Minimize } else { Sense::Maximize };
    let mut lp = LinearProgram::new(sense);
    let vars: Vec<VarId> = (0..n)
        .map(|j| {
            let lo = rng.gen_range(-5..=2) as f64;
            let hi = lo + rng.gen_range(0..=8) as f64;
            lp.add_continuous(format!("x{j}"), lo, hi)
        })
        .collect();
    for &v in &vars {
        lp.set_objective(v, rng.gen_range(-10..=10) as f64 / 2.0);
    }
    for i in 0..m {
        let mut terms = Vec::new();
        for &v in &vars {
            if rng.gen_bool(0.7) {
                terms.push((v, rng.gen_range(-6..=6) as f64));
            }
        }
        let rhs = rng.gen_range(-10..=15) as f64;
        let bound = match rng.gen_range(0..10) {
            0 => RowBound::Eq(rhs),
            1..=4 => RowBound::Le(rhs),
            5..=7 => RowBound::Ge(rhs - 5.0),
            _ => RowBound::Range(rhs - 6.0, rhs),
        };
        lp.add_constraint(format!("c{i}"), terms, bound);
    }
    lp
}

pub fn random_binary_program(rng: &mut impl Rng) -> LinearProgram {
    let n = rng.gen_range(1..=10);
    let m = rng.gen_range(1..=4);
    let sense = if rng.gen_bool(0.5) { Sense::Minimize } else { Sense::Maximize };
    let mut lp = LinearProgram::new(sense);
    let vars: Vec<VarId> = (0..n).map(|j| lp.add_binary(format!("z{j}"))).collect();
    for &v in &vars {
        lp.set_objective(v, rng.gen_range(-20..=20) as f64);
    }
    for i in 0..m {
        let terms: Vec<(VarId, f64)> = vars.iter().map(|&v| (v, rng.gen_range(-5..=9) as f64)).collect();
        let total: f64 = terms.iter().map(|t| t.1.abs()).sum();
        let rhs = (rng.gen_range(0.2..0.7) * total).round();
        let bound = if rng.gen_bool(0.7) { RowBound::Le(rhs) } else { RowBound::Ge(-rhs) };
        lp.add_constraint(format!("k{i}"), terms, bound);
    }
    lp
}

