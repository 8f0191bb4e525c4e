use log::{debug, trace};
use serde::{Deserialize, Serialize};

use crate::lu::Factor;
use crate::problem::{LpError, LpProblem, Relation, Sense};
use crate::{MAX_ITERATIONS, TOL};

const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 100;
const BLAND_AFTER: usize = 500;
const DEGENERATE_STEP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable sitting at zero.
    Free,
}

/// Basis statuses for the structural columns and for the logical column of every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub cols: Vec<VarStatus>,
    pub rows: Vec<VarStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub row_duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub basis: Basis,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Solves `p` from the all-logical basis.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution, LpError> {
    p.validate()?;
    let mut s = Simplex::new(p);
    s.cold_start();
    s.solve(false, p)
}

/// Solves `p` starting from `hint`, typically the optimal basis of a problem
/// with the same columns and a subset of the rows (extra rows start with
/// their logical basic). Falls back to a cold start if the hint does not fit.
pub fn warm_start_solve(p: &LpProblem, hint: &Basis) -> Result<LpSolution, LpError> {
    p.validate()?;
    let mut s = Simplex::new(p);
    if s.load_hint(hint) {
        match s.try_refactor() {
            Ok(()) => return s.solve(true, p),
            Err(_) => debug!("warm start basis could not be repaired, cold restart"),
        }
    } else {
        debug!("warm start basis does not fit the problem, cold restart");
    }
    let mut s = Simplex::new(p);
    s.cold_start();
    s.solve(false, p)
}

struct Simplex {
    m: usize,
    n: usize,
    cols: Vec<Vec<(usize, f64)>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    rhs: Vec<f64>,
    // Original index of every kept row; empty rows are dropped.
    row_map: Vec<usize>,
    n_orig_rows: usize,
    status: Vec<VarStatus>,
    basic: Vec<usize>,
    x: Vec<f64>,
    factor: Factor,
    iterations: usize,
    degenerate_streak: usize,
    infeasible_empty_row: bool,
}

impl Simplex {
    fn new(p: &LpProblem) -> Self {
        let n = p.n_cols;
        let mut row_map = Vec::new();
        let mut infeasible_empty_row = false;
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut lo = p.col_lo.clone();
        let mut hi = p.col_hi.clone();
        let mut rhs = Vec::new();
        let mut scratch: Vec<f64> = vec![0.0; n];
        let mut seen: Vec<bool> = vec![false; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut row_lo = Vec::new();
        let mut row_hi = Vec::new();
        for (r, row) in p.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                if !seen[j] {
                    seen[j] = true;
                    touched.push(j);
                }
                scratch[j] += a;
            }
            touched.sort_unstable();
            let nonzero: Vec<(usize, f64)> =
                touched.iter().filter(|&&j| scratch[j] != 0.0).map(|&j| (j, scratch[j])).collect();
            for &j in &touched {
                scratch[j] = 0.0;
                seen[j] = false;
            }
            touched.clear();
            if nonzero.is_empty() {
                let ok = match row.relation {
                    Relation::Le => row.rhs >= -TOL,
                    Relation::Ge => row.rhs <= TOL,
                    Relation::Eq => row.rhs.abs() <= TOL,
                };
                if !ok {
                    infeasible_empty_row = true;
                }
                continue;
            }
            let k = row_map.len();
            row_map.push(r);
            for (j, a) in nonzero {
                cols[j].push((k, a));
            }
            rhs.push(row.rhs);
            // a'x + s = rhs
            let (slo, shi) = match row.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            row_lo.push(slo);
            row_hi.push(shi);
        }
        let m = row_map.len();
        lo.extend(row_lo);
        hi.extend(row_hi);
        let sign = match p.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut cost: Vec<f64> = p.objective.iter().map(|c| sign * c).collect();
        cost.extend(std::iter::repeat(0.0).take(m));
        Self {
            m,
            n,
            cols,
            lo,
            hi,
            cost,
            rhs,
            row_map,
            n_orig_rows: p.rows.len(),
            status: vec![VarStatus::AtLower; n + m],
            basic: Vec::with_capacity(m),
            x: vec![0.0; n + m],
            factor: Factor::empty(m),
            iterations: 0,
            degenerate_streak: 0,
            infeasible_empty_row,
        }
    }

    fn cold_start(&mut self) {
        for j in 0..self.n {
            self.status[j] = self.nonbasic_status_for(j, VarStatus::AtLower);
        }
        self.basic.clear();
        for r in 0..self.m {
            self.status[self.n + r] = VarStatus::Basic;
            self.basic.push(self.n + r);
        }
        let _ = self.try_refactor();
    }

    fn load_hint(&mut self, hint: &Basis) -> bool {
        if hint.cols.len() != self.n || hint.rows.len() > self.n_orig_rows {
            return false;
        }
        for j in 0..self.n {
            self.status[j] = match hint.cols[j] {
                VarStatus::Basic => VarStatus::Basic,
                other => self.nonbasic_status_for(j, other),
            };
        }
        for (k, &r) in self.row_map.iter().enumerate() {
            let j = self.n + k;
            let st = hint.rows.get(r).copied().unwrap_or(VarStatus::Basic);
            self.status[j] = match st {
                VarStatus::Basic => VarStatus::Basic,
                other => self.nonbasic_status_for(j, other),
            };
        }
        self.basic = (0..self.n + self.m).filter(|&j| self.status[j] == VarStatus::Basic).collect();
        self.basic.len() == self.m
    }

    /// Normalizes a requested nonbasic status against the variable's finite bounds.
    fn nonbasic_status_for(&self, j: usize, want: VarStatus) -> VarStatus {
        let (lo, hi) = (self.lo[j], self.hi[j]);
        let lo_ok = lo.is_finite();
        let hi_ok = hi.is_finite();
        match want {
            VarStatus::AtUpper if hi_ok => VarStatus::AtUpper,
            VarStatus::AtLower if lo_ok => VarStatus::AtLower,
            _ if lo_ok => VarStatus::AtLower,
            _ if hi_ok => VarStatus::AtUpper,
            _ => VarStatus::Free,
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.status[j] {
            VarStatus::AtLower => self.lo[j],
            VarStatus::AtUpper => self.hi[j],
            VarStatus::Free => 0.0,
            VarStatus::Basic => self.x[j],
        }
    }

    fn column_dense(&self, j: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.m];
        if j < self.n {
            for &(i, a) in &self.cols[j] {
                v[i] = a;
            }
        } else {
            v[j - self.n] = 1.0;
        }
        v
    }

    fn dot_col(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            self.cols[j].iter().map(|&(i, a)| a * y[i]).sum()
        } else {
            y[j - self.n]
        }
    }

    fn try_refactor(&mut self) -> Result<(), LpError> {
        for _ in 0..=self.m {
            let columns: Vec<Vec<f64>> = self.basic.iter().map(|&j| self.column_dense(j)).collect();
            match self.factor.factorize(&columns) {
                Ok(()) => {
                    self.recompute_basic_values();
                    return Ok(());
                }
                Err(sing) => {
                    let slack =
                        sing.remaining_rows.iter().map(|&r| self.n + r).find(|&j| self.status[j] != VarStatus::Basic);
                    let Some(slack) = slack else {
                        return Err(LpError::SingularBasis);
                    };
                    let old = self.basic[sing.step];
                    trace!("basis repair: column {old} replaced by logical {slack}");
                    let nearest = if (self.x[old] - self.lo[old]).abs() <= (self.hi[old] - self.x[old]).abs() {
                        VarStatus::AtLower
                    } else {
                        VarStatus::AtUpper
                    };
                    self.status[old] = self.nonbasic_status_for(old, nearest);
                    self.status[slack] = VarStatus::Basic;
                    self.basic[sing.step] = slack;
                }
            }
        }
        Err(LpError::SingularBasis)
    }

    fn recompute_basic_values(&mut self) {
        let mut r = self.rhs.clone();
        for j in 0..self.n + self.m {
            if self.status[j] == VarStatus::Basic {
                continue;
            }
            let v = self.nonbasic_value(j);
            self.x[j] = v;
            if v != 0.0 {
                if j < self.n {
                    for &(i, a) in &self.cols[j] {
                        r[i] -= a * v;
                    }
                } else {
                    r[j - self.n] -= v;
                }
            }
        }
        let xb = self.factor.ftran(&r);
        for (k, &j) in self.basic.iter().enumerate() {
            self.x[j] = xb[k];
        }
    }

    fn infeasibility(&self, j: usize) -> f64 {
        (self.lo[j] - self.x[j]).max(self.x[j] - self.hi[j]).max(0.0)
    }

    fn duals(&self) -> Vec<f64> {
        let cb: Vec<f64> = self.basic.iter().map(|&j| self.cost[j]).collect();
        self.factor.btran(&cb)
    }

    fn dual_feasible(&self, y: &[f64]) -> bool {
        (0..self.n + self.m).all(|j| {
            if self.lo[j] == self.hi[j] {
                return true;
            }
            let d = self.cost[j] - self.dot_col(j, y);
            match self.status[j] {
                VarStatus::Basic => true,
                VarStatus::AtLower => d >= -TOL,
                VarStatus::AtUpper => d <= TOL,
                VarStatus::Free => d.abs() <= TOL,
            }
        })
    }

    fn maybe_refactor(&mut self) -> Result<(), LpError> {
        if self.factor.eta_count() >= REFACTOR_EVERY {
            self.try_refactor()?;
        }
        Ok(())
    }

    fn solve(mut self, warm: bool, p: &LpProblem) -> Result<LpSolution, LpError> {
        if self.infeasible_empty_row {
            return Ok(self.finish(LpStatus::Infeasible, p));
        }
        let mut status = None;
        if warm {
            let y = self.duals();
            if self.dual_feasible(&y) {
                match self.dual_simplex()? {
                    LpStatus::Optimal => status = Some(LpStatus::Optimal),
                    LpStatus::Infeasible => return Ok(self.finish(LpStatus::Infeasible, p)),
                    LpStatus::IterationLimit => return Ok(self.finish(LpStatus::IterationLimit, p)),
                    LpStatus::Unbounded => {}
                }
            }
        }
        let mut status = match status {
            Some(s) => s,
            None => self.primal_simplex()?,
        };
        // Polish: refactor, and if accumulated error broke feasibility, keep iterating.
        for _ in 0..3 {
            if status != LpStatus::Optimal {
                break;
            }
            self.try_refactor()?;
            let primal_ok = self.basic.iter().all(|&j| self.infeasibility(j) <= 10.0 * TOL);
            let y = self.duals();
            if primal_ok && self.dual_feasible_loose(&y) {
                break;
            }
            debug!("simplex polish: resuming after refactorization");
            status = self.primal_simplex()?;
        }
        Ok(self.finish(status, p))
    }

    fn dual_feasible_loose(&self, y: &[f64]) -> bool {
        (0..self.n + self.m).all(|j| {
            if self.lo[j] == self.hi[j] {
                return true;
            }
            let d = self.cost[j] - self.dot_col(j, y);
            match self.status[j] {
                VarStatus::Basic => true,
                VarStatus::AtLower => d >= -10.0 * TOL,
                VarStatus::AtUpper => d <= 10.0 * TOL,
                VarStatus::Free => d.abs() <= 10.0 * TOL,
            }
        })
    }

    fn record_step(&mut self, step: f64) -> bool {
        if step <= DEGENERATE_STEP {
            self.degenerate_streak += 1;
        } else {
            self.degenerate_streak = 0;
        }
        self.degenerate_streak >= BLAND_AFTER
    }

    fn primal_simplex(&mut self) -> Result<LpStatus, LpError> {
        let m = self.m;
        let total = self.n + m;
        let mut bland = false;
        loop {
            if self.iterations >= MAX_ITERATIONS {
                return Ok(LpStatus::IterationLimit);
            }
            self.maybe_refactor()?;

            let mut phase_one = false;
            let mut cb = vec![0.0; m];
            for (k, &j) in self.basic.iter().enumerate() {
                if self.x[j] < self.lo[j] - TOL {
                    cb[k] = -1.0;
                    phase_one = true;
                } else if self.x[j] > self.hi[j] + TOL {
                    cb[k] = 1.0;
                    phase_one = true;
                }
            }
            if !phase_one {
                for (k, &j) in self.basic.iter().enumerate() {
                    cb[k] = self.cost[j];
                }
            }
            let y = self.factor.btran(&cb);

            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..total {
                let st = self.status[j];
                if st == VarStatus::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let cj = if phase_one { 0.0 } else { self.cost[j] };
                let d = cj - self.dot_col(j, &y);
                let eligible = match st {
                    VarStatus::AtLower => d < -TOL,
                    VarStatus::AtUpper => d > TOL,
                    VarStatus::Free => d.abs() > TOL,
                    VarStatus::Basic => false,
                };
                if eligible {
                    if bland {
                        entering = Some((j, d));
                        break;
                    }
                    if d.abs() > best {
                        best = d.abs();
                        entering = Some((j, d));
                    }
                }
            }
            let Some((q, dq)) = entering else {
                return Ok(if phase_one { LpStatus::Infeasible } else { LpStatus::Optimal });
            };
            let dir = if dq < 0.0 { 1.0 } else { -1.0 };
            let w = self.factor.ftran(&self.column_dense(q));

            // Candidates: (position, rate, distance, leaves_at_upper)
            let mut cands: Vec<(usize, f64, f64, bool)> = Vec::new();
            for k in 0..m {
                if w[k].abs() <= PIVOT_TOL {
                    continue;
                }
                let rate = -dir * w[k];
                let j = self.basic[k];
                let (xv, lo, hi) = (self.x[j], self.lo[j], self.hi[j]);
                if rate < 0.0 {
                    if xv > hi + TOL {
                        cands.push((k, rate, xv - hi, true));
                    } else if xv >= lo - TOL && lo.is_finite() {
                        cands.push((k, rate, (xv - lo).max(0.0), false));
                    }
                } else if xv < lo - TOL {
                    cands.push((k, rate, lo - xv, false));
                } else if xv <= hi + TOL && hi.is_finite() {
                    cands.push((k, rate, (hi - xv).max(0.0), true));
                }
            }
            let range = self.hi[q] - self.lo[q];
            let chosen = if bland {
                let mut pick: Option<(usize, f64)> = None;
                for &(k, rate, dist, _) in &cands {
                    let t = dist / rate.abs();
                    match pick {
                        None => pick = Some((k, t)),
                        Some((pk, pt)) => {
                            if t < pt - 1e-15 || (t <= pt + 1e-15 && self.basic[k] < self.basic[pk]) {
                                pick = Some((k, t));
                            }
                        }
                    }
                }
                pick
            } else {
                let theta_max =
                    cands.iter().map(|&(_, rate, dist, _)| (dist + TOL) / rate.abs()).fold(f64::INFINITY, f64::min);
                let mut pick: Option<(usize, f64)> = None;
                let mut best_rate = 0.0;
                for &(k, rate, dist, _) in &cands {
                    let t = dist / rate.abs();
                    if t <= theta_max && rate.abs() > best_rate {
                        best_rate = rate.abs();
                        pick = Some((k, t));
                    }
                }
                pick
            };

            self.iterations += 1;
            match chosen {
                Some((r, theta)) if theta < range => {
                    let leave_upper = cands.iter().find(|c| c.0 == r).map(|c| c.3).unwrap_or(false);
                    self.apply_primal_step(q, dir, theta, &w);
                    let p = self.basic[r];
                    if leave_upper {
                        self.x[p] = self.hi[p];
                        self.status[p] = VarStatus::AtUpper;
                    } else {
                        self.x[p] = self.lo[p];
                        self.status[p] = VarStatus::AtLower;
                    }
                    self.status[q] = VarStatus::Basic;
                    self.basic[r] = q;
                    self.factor.push_eta(r, w);
                    bland = self.record_step(theta);
                }
                _ if range.is_finite() => {
                    // Bound flip of the entering variable, no basis change.
                    self.apply_primal_step(q, dir, range, &w);
                    self.status[q] = if dir > 0.0 { VarStatus::AtUpper } else { VarStatus::AtLower };
                    self.x[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                    bland = self.record_step(range);
                }
                _ => {
                    if phase_one {
                        debug!("phase one direction without blocking row; treating as infeasible");
                        return Ok(LpStatus::Infeasible);
                    }
                    return Ok(LpStatus::Unbounded);
                }
            }
        }
    }

    fn apply_primal_step(&mut self, q: usize, dir: f64, theta: f64, w: &[f64]) {
        if theta == 0.0 {
            return;
        }
        self.x[q] += dir * theta;
        for (k, &j) in self.basic.iter().enumerate() {
            self.x[j] -= dir * theta * w[k];
        }
    }

    fn dual_simplex(&mut self) -> Result<LpStatus, LpError> {
        let m = self.m;
        let total = self.n + m;
        let mut bland = false;
        loop {
            if self.iterations >= MAX_ITERATIONS {
                return Ok(LpStatus::IterationLimit);
            }
            self.maybe_refactor()?;

            let mut leaving: Option<usize> = None;
            let mut worst = TOL;
            for (k, &j) in self.basic.iter().enumerate() {
                let inf = self.infeasibility(j);
                if inf > TOL {
                    if bland {
                        if leaving.map_or(true, |r| j < self.basic[r]) {
                            leaving = Some(k);
                        }
                    } else if inf > worst {
                        worst = inf;
                        leaving = Some(k);
                    }
                }
            }
            let Some(r) = leaving else {
                return Ok(LpStatus::Optimal);
            };
            let p = self.basic[r];
            let going_up = self.x[p] < self.lo[p];
            let target = if going_up { self.lo[p] } else { self.hi[p] };

            let y = self.duals();
            let mut e = vec![0.0; m];
            e[r] = 1.0;
            let rho = self.factor.btran(&e);

            let mut cands: Vec<(usize, f64, f64)> = Vec::new();
            for j in 0..total {
                let st = self.status[j];
                if st == VarStatus::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let alpha = self.dot_col(j, &rho);
                if alpha.abs() <= PIVOT_TOL {
                    continue;
                }
                let d = self.cost[j] - self.dot_col(j, &y);
                let (eligible, dist) = match st {
                    VarStatus::AtLower => ((alpha < 0.0) == going_up, d.max(0.0)),
                    VarStatus::AtUpper => ((alpha > 0.0) == going_up, (-d).max(0.0)),
                    VarStatus::Free => (true, d.abs()),
                    VarStatus::Basic => (false, 0.0),
                };
                if eligible {
                    cands.push((j, alpha, dist));
                }
            }
            let chosen = if bland {
                let mut pick: Option<(usize, f64)> = None;
                for &(j, alpha, dist) in &cands {
                    let t = dist / alpha.abs();
                    match pick {
                        None => pick = Some((j, t)),
                        Some((pj, pt)) => {
                            if t < pt - 1e-15 || (t <= pt + 1e-15 && j < pj) {
                                pick = Some((j, t));
                            }
                        }
                    }
                }
                pick.map(|x| x.0)
            } else {
                let theta_max =
                    cands.iter().map(|&(_, alpha, dist)| (dist + TOL) / alpha.abs()).fold(f64::INFINITY, f64::min);
                let mut pick = None;
                let mut best = 0.0;
                for &(j, alpha, dist) in &cands {
                    if dist / alpha.abs() <= theta_max && alpha.abs() > best {
                        best = alpha.abs();
                        pick = Some(j);
                    }
                }
                pick
            };
            let Some(q) = chosen else {
                return Ok(LpStatus::Infeasible);
            };

            let w = self.factor.ftran(&self.column_dense(q));
            if w[r].abs() <= PIVOT_TOL {
                // FTRAN and BTRAN disagree; refresh the factorization and retry.
                self.try_refactor()?;
                self.iterations += 1;
                continue;
            }
            let t = (self.x[p] - target) / w[r];
            self.iterations += 1;
            self.x[q] += t;
            for (k, &j) in self.basic.iter().enumerate() {
                self.x[j] -= t * w[k];
            }
            self.x[p] = target;
            self.status[p] = if going_up { VarStatus::AtLower } else { VarStatus::AtUpper };
            self.status[q] = VarStatus::Basic;
            self.basic[r] = q;
            self.factor.push_eta(r, w);
            let dual_step = cands.iter().find(|c| c.0 == q).map(|c| c.2 / c.1.abs()).unwrap_or(0.0);
            bland = self.record_step(dual_step);
        }
    }

    fn finish(self, status: LpStatus, p: &LpProblem) -> LpSolution {
        let n = self.n;
        let sign = match p.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let x: Vec<f64> = self.x[..n].to_vec();
        let mut row_duals = vec![0.0; self.n_orig_rows];
        let mut reduced_costs = vec![0.0; n];
        if status == LpStatus::Optimal && self.m + n > 0 {
            let y = if self.m > 0 { self.duals() } else { Vec::new() };
            for (k, &r) in self.row_map.iter().enumerate() {
                row_duals[r] = sign * y[k];
            }
            for j in 0..n {
                reduced_costs[j] = sign * (self.cost[j] - self.dot_col(j, &y));
            }
        }
        let mut row_status = vec![VarStatus::Basic; self.n_orig_rows];
        for (k, &r) in self.row_map.iter().enumerate() {
            row_status[r] = self.status[n + k];
        }
        let objective = p.objective_value(&x);
        LpSolution {
            status,
            x,
            objective,
            row_duals,
            reduced_costs,
            basis: Basis { cols: self.status[..n].to_vec(), rows: row_status },
            iterations: self.iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Relation;

    fn small_max() -> LpProblem {
        // max 3x1 + 2x2 s.t. x1 + x2 <= 4, x1 + 3x2 <= 6, x >= 0
        let mut p = LpProblem::new(2, Sense::Maximize);
        p.objective = vec![3.0, 2.0];
        p.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Le, 4.0);
        p.add_row(vec![(0, 1.0), (1, 3.0)], Relation::Le, 6.0);
        p
    }

    #[test]
    fn single_binding_row() {
        let mut p = LpProblem::new(2, Sense::Maximize);
        p.objective = vec![1.0, 1.0];
        p.col_hi = vec![1.0, 1.0];
        p.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Le, 1.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-9);
        assert!((s.row_duals[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_dimensional_vertex() {
        let s = solve_lp(&small_max()).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 4.0).abs() < 1e-9 && s.x[1].abs() < 1e-9);
        assert!((s.objective - 12.0).abs() < 1e-9);
        assert!((s.row_duals[0] - 3.0).abs() < 1e-9);
        assert!(s.row_duals[1].abs() < 1e-9);
    }

    #[test]
    fn contradictory_bounds_rows_are_infeasible() {
        let mut p = LpProblem::new(1, Sense::Maximize);
        p.col_lo = vec![f64::NEG_INFINITY];
        p.add_row(vec![(0, 1.0)], Relation::Ge, 2.0);
        p.add_row(vec![(0, 1.0)], Relation::Le, 1.0);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray() {
        let mut p = LpProblem::new(2, Sense::Maximize);
        p.objective = vec![1.0, 0.0];
        p.add_row(vec![(0, 1.0), (1, -1.0)], Relation::Le, 1.0);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_columns_and_equalities() {
        // min |shifted| objective: min x1 s.t. x1 - x2 = -3, x2 in [0, 2], x1 free
        let mut p = LpProblem::new(2, Sense::Minimize);
        p.col_lo = vec![f64::NEG_INFINITY, 0.0];
        p.col_hi = vec![f64::INFINITY, 2.0];
        p.objective = vec![1.0, 0.0];
        p.add_row(vec![(0, 1.0), (1, -1.0)], Relation::Eq, -3.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective + 3.0).abs() < 1e-9);
        assert!((s.row_duals[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn warm_start_with_own_basis_takes_no_pivots() {
        let p = small_max();
        let s = solve_lp(&p).unwrap();
        let w = warm_start_solve(&p, &s.basis).unwrap();
        assert_eq!(w.iterations, 0);
        assert!((w.objective - s.objective).abs() < 1e-12);
    }

    #[test]
    fn warm_start_after_bound_change_matches_cold() {
        let mut p = small_max();
        let s = solve_lp(&p).unwrap();
        p.col_hi[0] = 2.5;
        let warm = warm_start_solve(&p, &s.basis).unwrap();
        let cold = solve_lp(&p).unwrap();
        assert_eq!(warm.status, LpStatus::Optimal);
        assert!((warm.objective - cold.objective).abs() < 1e-9);
        p.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Ge, 5.0);
        let inf = warm_start_solve(&p, &warm.basis).unwrap();
        assert_eq!(inf.status, LpStatus::Infeasible);
    }

    #[test]
    fn empty_row_is_dropped_or_infeasible() {
        let mut p = small_max();
        p.add_row(vec![(0, 0.0)], Relation::Le, 1.0);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.row_duals.len(), 3);
        assert!((s.objective - 12.0).abs() < 1e-9);
        p.add_row(vec![], Relation::Ge, 1.0);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn lp_text_mentions_every_row() {
        let text = small_max().to_lp_text();
        assert!(text.starts_with("maximize"));
        assert!(text.contains("r0:") && text.contains("r1:"));
        assert!(text.trim_end().ends_with("end"));
    }
}
