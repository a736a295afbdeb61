use std::fmt;

use super::SolverError;

/// Index of a variable inside a [`LinearProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

/// Right-hand side of a row. `Range` keeps both sides of a two-sided limit in one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowBound {
    Le(f64),
    Ge(f64),
    Eq(f64),
    Range(f64, f64),
}

impl RowBound {
    /// Activity interval `[lo, hi]` accepted by the row.
    pub fn interval(&self) -> (f64, f64) {
        match *self {
            RowBound::Le(v) => (f64::NEG_INFINITY, v),
            RowBound::Ge(v) => (v, f64::INFINITY),
            RowBound::Eq(v) => (v, v),
            RowBound::Range(lo, hi) => (lo, hi),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub bound: RowBound,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, a)| a * x[v.0]).sum()
    }
}

/// A bounded-variable linear program, optionally with binary variables.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub sense: Sense,
    pub variables: Vec<Variable>,
    pub objective: Vec<f64>,
    pub objective_offset: f64,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            variables: Vec::new(),
            objective: Vec::new(),
            objective_offset: 0.0,
            constraints: Vec::new(),
        }
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, kind: VarKind) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
            kind,
        });
        self.objective.push(0.0);
        VarId(self.variables.len() - 1)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, lower, upper, VarKind::Continuous)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, 0.0, 1.0, VarKind::Binary)
    }

    pub fn set_objective(&mut self, var: VarId, coef: f64) {
        self.objective[var.0] = coef;
    }

    pub fn add_objective(&mut self, var: VarId, coef: f64) {
        self.objective[var.0] += coef;
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, terms: Vec<(VarId, f64)>, bound: RowBound) -> usize {
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            bound,
        });
        self.constraints.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn has_integers(&self) -> bool {
        self.variables.iter().any(|v| v.kind == VarKind::Binary)
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_offset + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &val) in self.variables.iter().zip(x) {
            worst = worst.max(v.lower - val).max(val - v.upper);
        }
        for c in &self.constraints {
            let (lo, hi) = c.bound.interval();
            let a = c.activity(x);
            worst = worst.max(lo - a).max(a - hi);
        }
        worst
    }

    /// Checks the structural invariants: finite data, ordered bounds, binaries in `[0, 1]`,
    /// and rows that reference only declared variables.
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.objective.len() != self.variables.len() {
            return Err(SolverError::Malformed("objective length differs from variable count".into()));
        }
        for (j, v) in self.variables.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(SolverError::Malformed(format!("variable {} has bounds [{}, {}]", v.name, v.lower, v.upper)));
            }
            if v.kind == VarKind::Binary && (v.lower < 0.0 || v.upper > 1.0) {
                return Err(SolverError::Malformed(format!("binary {} has bounds outside [0, 1]", v.name)));
            }
            if !self.objective[j].is_finite() {
                return Err(SolverError::Malformed(format!("objective coefficient of {} is not finite", v.name)));
            }
        }
        for c in &self.constraints {
            for &(v, a) in &c.terms {
                if v.0 >= self.variables.len() {
                    return Err(SolverError::Malformed(format!("row {} references unknown variable {}", c.name, v.0)));
                }
                if !a.is_finite() {
                    return Err(SolverError::Malformed(format!("row {} has non-finite coefficient", c.name)));
                }
            }
            let (lo, hi) = c.bound.interval();
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(SolverError::Malformed(format!("row {} has right-hand side [{lo}, {hi}]", c.name)));
            }
        }
        Ok(())
    }
}

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// Human-readable dump, one row per line.
impl fmt::Display for LinearProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sense = match self.sense {
            Sense::Minimize => "minimize",
            Sense::Maximize => "maximize",
        };
        write!(f, "{sense}")?;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                write!(f, " {c:+} {}", self.variables[j].name)?;
            }
        }
        if self.objective_offset != 0.0 {
            write!(f, " {:+}", self.objective_offset)?;
        }
        writeln!(f)?;
        writeln!(f, "subject to")?;
        for c in &self.constraints {
            write!(f, "  {}:", c.name)?;
            for &(v, a) in &c.terms {
                write!(f, " {a:+} {}", self.variables[v.0].name)?;
            }
            match c.bound {
                RowBound::Le(v) => writeln!(f, " <= {v}")?,
                RowBound::Ge(v) => writeln!(f, " >= {v}")?,
                RowBound::Eq(v) => writeln!(f, " = {v}")?,
                RowBound::Range(lo, hi) => writeln!(f, " in [{lo}, {hi}]")?,
            }
        }
        writeln!(f, "bounds")?;
        for v in &self.variables {
            let kind = match v.kind {
                VarKind::Continuous => "",
                VarKind::Binary => " binary",
            };
            writeln!(f, "  {} <= {} <= {}{kind}", fmt_bound(v.lower), v.name, fmt_bound(v.upper))?;
        }
        Ok(())
    }
}
