//! Dense bounded-variable linear programming.
//!
//! The solver works on problems of the form
//!
//! ```text
//! max / min  c'x
//! s.t.       a_r'x  (<= | = | >=)  rhs_r      for every row r
//!            lo_j <= x_j <= hi_j              (infinite bounds allowed)
//! ```
//!
//! Each row gets a logical (slack) column so the working system is always
//! `[A | I] (x, s) = rhs`. The basis is factorized densely (LU with partial
//! pivoting) and updated in product form between refactorizations. Cold
//! solves run a composite primal simplex; warm starts whose basis is still
//! dual feasible run the dual simplex instead, which is the common case in
//! branch-and-bound after a bound change.
//!
//! Every optimal [`LpSolution`] carries row duals and reduced costs in the
//! caller's objective sense, so that
//! `objective = sum_r rhs_r * dual_r + sum_j reduced_cost_j * x_j`.

#![allow(clippy::needless_range_loop)]

mod lu;
mod problem;
mod simplex;

pub use problem::{LpError, LpProblem, Relation, Row, Sense};
pub use simplex::{solve_lp, warm_start_solve, Basis, LpSolution, LpStatus, VarStatus};

/// Feasibility and optimality tolerance shared by every comparison in the kernel.
pub const TOL: f64 = 1e-7;

/// Hard cap on simplex iterations for one solve.
pub const MAX_ITERATIONS: usize = 50_000;
