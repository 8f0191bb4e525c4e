//! Valid inequalities bounding the ensemble objective by an affine function
//! of the binaries, read off the LP dual at a fixed activation pattern.
//!
//! For fixed `z` the remaining problem is an LP. Any dual vector `u` with the
//! right signs gives, for every feasible point `v` of the relaxation,
//!
//! ```text
//! c.v = u'A v + d.v  <=  u'rhs + sum_{j not z} max(d_j lo_j, d_j hi_j) + sum_{k in z} d_k z_k
//! ```
//!
//! with `d = c - A'u`. Restricted to the hidden-neuron rows this is
//! `sum b pi + sum |LB| (1 - z) alpha + sum UB z beta`, plus a constant from
//! the column bounds that are binding at the generator.

use std::collections::HashSet;

use ennopt_lp::{solve_lp, warm_start_solve, Basis, LpSolution, Relation};

use crate::bnb::{Callbacks, CutRow, IntegerVerdict, NodeInfo, NodeResponse};
use crate::error::Result;
use crate::formulation::MilpModel;
use crate::model::EnsembleModel;

/// Tolerance used when checking a cut against a point.
pub const CUT_TOL: f64 = 1e-6;

/// Dual values of the fixed-pattern LP, sign-corrected.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    /// Duals of the hidden definition rows `h - W y = b`.
    pub pi: Vec<f64>,
    /// Duals of `y - h - LB z <= -LB` (nonnegative).
    pub alpha: Vec<f64>,
    /// Duals of `y - UB z <= 0` (nonnegative).
    pub beta: Vec<f64>,
    /// Duals of every row of the model, in row order.
    pub row_duals: Vec<f64>,
    /// Pattern the point was generated at.
    pub z: Vec<f64>,
    /// Optimum of the fixed-pattern LP.
    pub lp_objective: f64,
}

/// Clamps a dual to the sign its row admits in a maximization.
fn admissible(rel: Relation, u: f64) -> f64 {
    match rel {
        Relation::Le => u.max(0.0),
        Relation::Ge => u.min(0.0),
        Relation::Eq => u,
    }
}

fn from_duals(m: &MilpModel, duals: &[f64], z: &[f64], lp_objective: f64) -> DualPoint {
    let row_duals: Vec<f64> = m.lp.rows.iter().zip(duals).map(|(r, &u)| admissible(r.relation, u)).collect();
    let pick = |rows: &[usize]| rows.iter().map(|&r| row_duals[r]).collect::<Vec<_>>();
    DualPoint {
        pi: pick(&m.rows.definition),
        alpha: pick(&m.rows.upper_lb),
        beta: pick(&m.rows.upper_ub),
        row_duals,
        z: z.to_vec(),
        lp_objective,
    }
}

/// Solves the model LP with the binaries fixed at `z`; `None` if that LP is infeasible.
pub fn extract_dual_point(m: &MilpModel, z: &[f64]) -> Result<Option<DualPoint>> {
    Ok(extract_dual_point_warm(m, z, None)?.map(|(d, _)| d))
}

/// As [`extract_dual_point`], warm-started from `hint`; also returns the final basis.
pub fn extract_dual_point_warm(m: &MilpModel, z: &[f64], hint: Option<&Basis>) -> Result<Option<(DualPoint, Basis)>> {
    let mut fixed = m.clone();
    fixed.fix_binaries(z);
    let sol = match hint {
        Some(b) => warm_start_solve(&fixed.lp, b)?,
        None => solve_lp(&fixed.lp)?,
    };
    if !sol.is_optimal() {
        return Ok(None);
    }
    Ok(Some((from_duals(m, &sol.row_duals, z, sol.objective), sol.basis)))
}

/// Dual point from an LP already solved with `z` fixed (extra trailing rows are ignored).
pub fn dual_point_from_solution(m: &MilpModel, sol: &LpSolution, z: &[f64]) -> DualPoint {
    from_duals(m, &sol.row_duals[..m.lp.n_rows()], z, sol.objective)
}

/// The inequality `c.v - sum_k d_k z_k <= const` implied by the dual point.
/// `None` if some unbounded column would make the bound infinite.
pub fn build_cut(d: &DualPoint, m: &MilpModel) -> Option<CutRow> {
    let lp = &m.lp;
    let mut red = lp.objective.clone();
    let mut rhs = 0.0;
    for (row, &u) in lp.rows.iter().zip(&d.row_duals) {
        if u == 0.0 {
            continue;
        }
        rhs += u * row.rhs;
        for &(c, a) in &row.coeffs {
            red[c] -= u * a;
        }
    }
    let mut is_binary = vec![false; lp.n_cols];
    for &c in &m.binary_cols {
        is_binary[c] = true;
    }
    let mut coeffs: Vec<(usize, f64)> = Vec::new();
    for j in 0..lp.n_cols {
        if is_binary[j] {
            if red[j] != 0.0 {
                coeffs.push((j, -red[j]));
            }
            continue;
        }
        let dj = red[j];
        if dj > 0.0 {
            rhs += dj * lp.col_hi[j];
        } else if dj < 0.0 {
            rhs += dj * lp.col_lo[j];
        }
    }
    if !rhs.is_finite() {
        return None;
    }
    for (j, &c) in lp.objective.iter().enumerate() {
        if c != 0.0 {
            coeffs.push((j, c));
        }
    }
    Some(CutRow { coeffs, rhs })
}

/// True iff `solution` satisfies the cut within [`CUT_TOL`].
pub fn check_cut_validity(cut: &CutRow, solution: &[f64]) -> bool {
    cut.violation(solution) <= CUT_TOL
}

/// Number of cuts in `cuts` that `solution` violates.
pub fn audit_cuts<'a>(cuts: impl IntoIterator<Item = &'a CutRow>, solution: &[f64]) -> usize {
    cuts.into_iter().filter(|c| !check_cut_validity(c, solution)).count()
}

/// Phase-one callbacks: forward-rounding incumbents at every fractional
/// node and, optionally, dual cuts separated at the rounded pattern.
pub struct CutSeparator<'a> {
    model: &'a EnsembleModel,
    pub generate_cuts: bool,
    /// Every cut generated, whether or not it entered the LP.
    pub generated: Vec<CutRow>,
    pub added: usize,
    seen: HashSet<Vec<bool>>,
    basis: Option<Basis>,
}

impl<'a> CutSeparator<'a> {
    pub fn new(model: &'a EnsembleModel, generate_cuts: bool) -> Self {
        Self { model, generate_cuts, generated: Vec::new(), added: 0, seen: HashSet::new(), basis: None }
    }

    fn cut_at(&mut self, m: &MilpModel, z: &[f64]) -> Option<CutRow> {
        let key: Vec<bool> = z.iter().map(|v| *v > 0.5).collect();
        if !self.seen.insert(key) {
            return None;
        }
        match extract_dual_point_warm(m, z, self.basis.as_ref()) {
            Ok(Some((d, basis))) => {
                self.basis = Some(basis);
                let cut = build_cut(&d, m)?;
                self.generated.push(cut.clone());
                Some(cut)
            }
            Ok(None) => None,
            Err(e) => {
                log::warn!("dual point extraction failed: {e}");
                None
            }
        }
    }
}

impl Callbacks for CutSeparator<'_> {
    fn on_integer_solution(&mut self, m: &MilpModel, sol: &LpSolution) -> IntegerVerdict {
        if self.generate_cuts {
            let z: Vec<f64> = m.z_of(&sol.x).iter().map(|v| v.round()).collect();
            if let Some(cut) = self.cut_at(m, &z) {
                if cut.violation(&sol.x) > CUT_TOL {
                    self.added += 1;
                    return IntegerVerdict::Reject(vec![cut]);
                }
            }
        }
        IntegerVerdict::Accept
    }

    fn on_node_fraction(&mut self, m: &MilpModel, sol: &LpSolution, _info: &NodeInfo) -> NodeResponse {
        let x = self.model.domain.clamp(&m.x_of(&sol.x));
        let mut resp = NodeResponse::default();
        let Some(point) = m.point_from_input(self.model, &x) else {
            return resp;
        };
        if self.generate_cuts {
            let z = m.z_of(&point);
            if let Some(cut) = self.cut_at(m, &z) {
                if cut.violation(&sol.x) > CUT_TOL {
                    self.added += 1;
                    resp.cuts.push(cut);
                }
            }
        }
        resp.candidates.push(point);
        resp
    }
}
