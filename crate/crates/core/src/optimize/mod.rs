//! Embedded LP/MILP solving.
//!
//! All optimization problems in the crate are expressed as a [`LinearProgram`] and
//! handed to a [`Backend`]. [`EmbeddedSolver`] is the reference backend: a dense
//! bounded-variable simplex plus best-bound branch-and-bound on binaries.

mod milp;
mod program;
mod simplex;

pub use milp::MilpOptions;
pub use program::{Constraint, LinearProgram, RowBound, Sense, VarId, VarKind, Variable};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("solve_lp called on a program with binary variables")]
    IntegerVariables,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Primal values; empty when no solution is available.
    pub values: Vec<f64>,
    /// Objective in the program's own sense, including the offset.
    pub objective: f64,
    /// Sensitivity of the objective to each row's active right-hand side (LP only).
    pub duals: Option<Vec<f64>>,
    /// Sensitivity of the objective to each variable's active bound (LP only).
    pub reduced_costs: Option<Vec<f64>>,
    /// Best proven bound on the objective (equal to `objective` for LPs).
    pub best_bound: f64,
    pub nodes: usize,
    pub iterations: usize,
}

impl SolveResult {
    pub(crate) fn status_only(status: SolveStatus, _n: usize, _m: usize) -> Self {
        Self {
            status,
            values: Vec::new(),
            objective: f64::NAN,
            duals: None,
            reduced_costs: None,
            best_bound: f64::NAN,
            nodes: 0,
            iterations: 0,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn has_solution(&self) -> bool {
        !self.values.is_empty()
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }
}

/// A pluggable solver backend.
pub trait Backend: Sync {
    fn solve_lp(&self, lp: &LinearProgram) -> Result<SolveResult, SolverError>;
    fn solve_milp(&self, lp: &LinearProgram, options: &MilpOptions) -> Result<SolveResult, SolverError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EmbeddedSolver;

impl Backend for EmbeddedSolver {
    fn solve_lp(&self, lp: &LinearProgram) -> Result<SolveResult, SolverError> {
        lp.validate()?;
        if lp.has_integers() {
            return Err(SolverError::IntegerVariables);
        }
        let lower: Vec<f64> = lp.variables.iter().map(|v| v.lower).collect();
        let upper: Vec<f64> = lp.variables.iter().map(|v| v.upper).collect();
        Ok(simplex::solve_with_bounds(lp, &lower, &upper))
    }

    fn solve_milp(&self, lp: &LinearProgram, options: &MilpOptions) -> Result<SolveResult, SolverError> {
        lp.validate()?;
        Ok(milp::branch_and_bound(lp, options))
    }
}

pub fn solve_lp(lp: &LinearProgram) -> Result<SolveResult, SolverError> {
    EmbeddedSolver.solve_lp(lp)
}

pub fn solve_milp(lp: &LinearProgram, options: &MilpOptions) -> Result<SolveResult, SolverError> {
    EmbeddedSolver.solve_milp(lp, options)
}
