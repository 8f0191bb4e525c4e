use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// One linear constraint `coeffs . x  relation  rhs`.
///
/// Coefficients are sparse `(column, value)` pairs; duplicate columns are summed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Row {
    pub fn new(coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> Self {
        Self { coeffs, relation, rhs }
    }

    /// Left-hand side evaluated at `x`.
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub n_cols: usize,
    pub col_lo: Vec<f64>,
    pub col_hi: Vec<f64>,
    pub objective: Vec<f64>,
    pub sense: Sense,
    pub rows: Vec<Row>,
}

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("column {col}: bound vector has length {got}, expected {expected}")]
    BoundLength { col: usize, got: usize, expected: usize },
    #[error("objective has length {got}, expected {expected}")]
    ObjectiveLength { got: usize, expected: usize },
    #[error("column {col}: lower bound {lo} exceeds upper bound {hi}")]
    CrossedBounds { col: usize, lo: f64, hi: f64 },
    #[error("column {col}: invalid bound (NaN or infinite in the wrong direction)")]
    InvalidBound { col: usize },
    #[error("row {row}: coefficient refers to column {col} but the problem has {n_cols} columns")]
    ColumnOutOfRange { row: usize, col: usize, n_cols: usize },
    #[error("row {row}: non-finite coefficient or right-hand side")]
    NonFiniteRow { row: usize },
    #[error("objective coefficient for column {col} is not finite")]
    NonFiniteObjective { col: usize },
    #[error("basis stayed singular after repair")]
    SingularBasis,
}

impl LpProblem {
    /// A problem with `n_cols` columns bounded below by zero, zero objective and no rows.
    pub fn new(n_cols: usize, sense: Sense) -> Self {
        Self {
            n_cols,
            col_lo: vec![0.0; n_cols],
            col_hi: vec![f64::INFINITY; n_cols],
            objective: vec![0.0; n_cols],
            sense,
            rows: Vec::new(),
        }
    }

    /// Appends a column and returns its index.
    pub fn add_col(&mut self, lo: f64, hi: f64, obj: f64) -> usize {
        self.col_lo.push(lo);
        self.col_hi.push(hi);
        self.objective.push(obj);
        self.n_cols += 1;
        self.n_cols - 1
    }

    /// Appends a row and returns its index.
    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) -> usize {
        self.rows.push(Row::new(coeffs, relation, rhs));
        self.rows.len() - 1
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.n_cols;
        if self.col_lo.len() != n {
            return Err(LpError::BoundLength { col: 0, got: self.col_lo.len(), expected: n });
        }
        if self.col_hi.len() != n {
            return Err(LpError::BoundLength { col: 0, got: self.col_hi.len(), expected: n });
        }
        if self.objective.len() != n {
            return Err(LpError::ObjectiveLength { got: self.objective.len(), expected: n });
        }
        for j in 0..n {
            let (lo, hi) = (self.col_lo[j], self.col_hi[j]);
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(LpError::InvalidBound { col: j });
            }
            if lo > hi {
                return Err(LpError::CrossedBounds { col: j, lo, hi });
            }
            if !self.objective[j].is_finite() {
                return Err(LpError::NonFiniteObjective { col: j });
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::NonFiniteRow { row: r });
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(LpError::ColumnOutOfRange { row: r, col: j, n_cols: n });
                }
                if !a.is_finite() {
                    return Err(LpError::NonFiniteRow { row: r });
                }
            }
        }
        Ok(())
    }

    /// Objective value of `x` in the problem's own sense.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.n_cols {
            worst = worst.max(self.col_lo[j] - x[j]).max(x[j] - self.col_hi[j]);
        }
        for row in &self.rows {
            worst = worst.max(row.violation(x));
        }
        worst
    }

    /// Human-readable fixed-format dump (objective, rows, bounds).
    pub fn to_lp_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let sense = match self.sense {
            Sense::Maximize => "maximize",
            Sense::Minimize => "minimize",
        };
        let _ = writeln!(out, "{sense}");
        let _ = writeln!(out, "  obj: {}", fmt_terms(self.objective.iter().copied().enumerate()));
        let _ = writeln!(out, "subject to");
        for (r, row) in self.rows.iter().enumerate() {
            let rel = match row.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            let _ = writeln!(out, "  r{r}: {} {rel} {:.17e}", fmt_terms(row.coeffs.iter().copied()), row.rhs);
        }
        let _ = writeln!(out, "bounds");
        for j in 0..self.n_cols {
            let _ = writeln!(out, "  {:.17e} <= c{j} <= {:.17e}", self.col_lo[j], self.col_hi[j]);
        }
        let _ = writeln!(out, "end");
        out
    }
}

fn fmt_terms(terms: impl Iterator<Item = (usize, f64)>) -> String {
    let parts: Vec<String> = terms.filter(|&(_, a)| a != 0.0).map(|(j, a)| format!("{a:+.17e} c{j}")).collect();
    if parts.is_empty() {
        "0".to_string()
    } else {
        parts.join(" ")
    }
}
