//! Best-first branch-and-bound over the binary columns of a [`MilpModel`].
//!
//! Node relaxations are warm-started from the parent's basis. Callers can
//! observe integral and fractional node solutions through [`Callbacks`] and
//! answer with global cut rows or candidate incumbents; the engine itself
//! has no primal heuristics.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;
use std::time::Instant;

use ennopt_lp::{solve_lp, warm_start_solve, Basis, LpProblem, LpSolution, LpStatus, Relation, VarStatus};
use serde::Serialize;

use crate::error::Result;
use crate::formulation::MilpModel;

pub const INT_TOL: f64 = 1e-6;
pub const PRUNE_TOL: f64 = 1e-9;
/// Feasibility tolerance for externally proposed incumbents.
pub const CANDIDATE_TOL: f64 = 1e-6;
const MAX_CUT_ROUNDS: usize = 5;

#[derive(Debug, Clone)]
pub struct BnbParams {
    pub node_limit: Option<usize>,
    /// Wall-clock limit in seconds.
    pub time_limit: Option<f64>,
    pub cut_pool_cap: usize,
    pub purge_every: usize,
    /// Record a per-node trace in [`SolveStats::trace`].
    pub trace: bool,
    /// Full column vector offered as the starting incumbent.
    pub start: Option<Vec<f64>>,
}

impl Default for BnbParams {
    fn default() -> Self {
        Self { node_limit: None, time_limit: None, cut_pool_cap: 5000, purge_every: 500, trace: false, start: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    /// Value of every model column.
    pub values: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NodeLimit,
    TimeLimit,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub node: usize,
    pub depth: usize,
    pub bound: f64,
    pub incumbent: f64,
    pub action: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveStats {
    pub status: SolveStatus,
    pub nodes_processed: usize,
    pub lp_iterations: usize,
    pub wall_time: f64,
    pub best_bound: f64,
    pub best_objective: f64,
    pub gap: f64,
    pub cuts_added: usize,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

/// A global inequality `coeffs . v <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl CutRow {
    pub fn activity(&self, v: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(c, a)| a * v[c]).sum()
    }

    pub fn violation(&self, v: &[f64]) -> f64 {
        self.activity(v) - self.rhs
    }
}

pub enum IntegerVerdict {
    Accept,
    /// Discard the solution; the cuts are added and the node is solved again.
    Reject(Vec<CutRow>),
}

/// What a fractional-node callback can send back.
#[derive(Default)]
pub struct NodeResponse {
    pub cuts: Vec<CutRow>,
    /// Full column vectors to be checked and possibly adopted as incumbents.
    pub candidates: Vec<Vec<f64>>,
}

pub struct NodeInfo {
    pub id: usize,
    pub depth: usize,
    pub bound: f64,
    pub incumbent: Option<f64>,
}

pub trait Callbacks {
    /// Called with the polished LP solution of a node whose binaries are integral.
    fn on_integer_solution(&mut self, _m: &MilpModel, _sol: &LpSolution) -> IntegerVerdict {
        IntegerVerdict::Accept
    }

    /// Called with the LP solution of a node whose binaries are fractional.
    fn on_node_fraction(&mut self, _m: &MilpModel, _sol: &LpSolution, _info: &NodeInfo) -> NodeResponse {
        NodeResponse::default()
    }
}

pub struct NoCallbacks;

impl Callbacks for NoCallbacks {}

/// Relative gap `(bound - objective) / max(|objective|, 1e-10)`, clamped at zero.
pub fn compute_gap(best_bound: f64, best_objective: f64) -> f64 {
    if (best_bound - best_objective).abs() <= 1e-9 {
        return 0.0;
    }
    ((best_bound - best_objective) / best_objective.abs().max(1e-10)).max(0.0)
}

struct Node {
    fixings: Vec<(usize, f64)>,
    bound: f64,
    depth: usize,
    seq: usize,
    basis: Option<(Basis, Vec<usize>)>,
    retried: bool,
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
    // Max-heap: larger bound first, then smaller depth, then earlier insertion.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.depth.cmp(&self.depth))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct PooledCut {
    id: usize,
    row: CutRow,
    binding: bool,
}

struct Engine<'a> {
    m: &'a MilpModel,
    params: &'a BnbParams,
    start: Instant,
    pool: Vec<PooledCut>,
    next_cut_id: usize,
    incumbent: Option<Incumbent>,
    stats: SolveStats,
    seq: usize,
}

impl<'a> Engine<'a> {
    fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn out_of_budget(&self) -> Option<SolveStatus> {
        if self.stats.nodes_processed == 0 {
            return None;
        }
        if let Some(limit) = self.params.node_limit {
            if self.stats.nodes_processed >= limit {
                return Some(SolveStatus::NodeLimit);
            }
        }
        if let Some(limit) = self.params.time_limit {
            if self.elapsed() >= limit {
                return Some(SolveStatus::TimeLimit);
            }
        }
        None
    }

    fn incumbent_value(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::NEG_INFINITY, |i| i.objective)
    }

    fn node_lp(&self, fixings: &[(usize, f64)]) -> LpProblem {
        let mut lp = self.m.lp.clone();
        for &(c, v) in fixings {
            lp.col_lo[c] = v;
            lp.col_hi[c] = v;
        }
        for cut in &self.pool {
            lp.add_row(cut.row.coeffs.clone(), Relation::Le, cut.row.rhs);
        }
        lp
    }

    /// Maps a stored basis onto the current cut pool (cuts matched by id).
    fn hint(&self, stored: &(Basis, Vec<usize>)) -> Basis {
        let (basis, ids) = stored;
        let base = self.m.lp.n_rows();
        let mut rows = basis.rows[..base.min(basis.rows.len())].to_vec();
        for cut in &self.pool {
            let st = ids
                .iter()
                .position(|&id| id == cut.id)
                .and_then(|k| basis.rows.get(base + k).copied())
                .unwrap_or(VarStatus::Basic);
            rows.push(st);
        }
        Basis { cols: basis.cols.clone(), rows }
    }

    fn solve(
        &mut self,
        fixings: &[(usize, f64)],
        basis: Option<&(Basis, Vec<usize>)>,
    ) -> Result<(LpSolution, Vec<usize>)> {
        let lp = self.node_lp(fixings);
        let sol = match basis {
            Some(b) => warm_start_solve(&lp, &self.hint(b))?,
            None => solve_lp(&lp)?,
        };
        self.stats.lp_iterations += sol.iterations;
        if sol.is_optimal() {
            for cut in &mut self.pool {
                if cut.row.violation(&sol.x) > -1e-7 {
                    cut.binding = true;
                }
            }
        }
        let ids = self.pool.iter().map(|c| c.id).collect();
        Ok((sol, ids))
    }

    fn add_cuts(&mut self, cuts: Vec<CutRow>) -> usize {
        let mut added = 0;
        for row in cuts {
            if self.pool.len() >= self.params.cut_pool_cap {
                if let Some(k) = self.pool.iter().position(|c| !c.binding) {
                    self.pool.remove(k);
                } else {
                    self.pool.remove(0);
                }
            }
            self.pool.push(PooledCut { id: self.next_cut_id, row, binding: false });
            self.next_cut_id += 1;
            added += 1;
        }
        self.stats.cuts_added += added;
        added
    }

    fn purge(&mut self) {
        let before = self.pool.len();
        self.pool.retain(|c| c.binding);
        for c in &mut self.pool {
            c.binding = false;
        }
        if before != self.pool.len() {
            log::trace!("purged {} never-binding cuts", before - self.pool.len());
        }
    }

    /// Adopts `values` as incumbent if it is feasible and improves.
    fn offer(&mut self, values: Vec<f64>) -> bool {
        if values.len() != self.m.n_cols() {
            return false;
        }
        if self.m.integrality_violation(&values) > INT_TOL || self.m.lp.max_violation(&values) > CANDIDATE_TOL {
            return false;
        }
        let objective = self.m.lp.objective_value(&values);
        if objective > self.incumbent_value() + PRUNE_TOL {
            self.incumbent = Some(Incumbent { values, objective });
            return true;
        }
        false
    }

    fn record(&mut self, node: usize, depth: usize, bound: f64, action: &'static str) {
        if self.params.trace {
            let incumbent = self.incumbent_value();
            self.stats.trace.push(TraceRow { node, depth, bound, incumbent, action });
        }
    }

    fn push(&mut self, heap: &mut BinaryHeap<Node>, mut node: Node) {
        node.seq = self.seq;
        self.seq += 1;
        heap.push(node);
    }

    /// Re-solves an integral node with every binary fixed at its rounded value.
    fn polish(&mut self, fixings: &[(usize, f64)], sol: &LpSolution, ids: &[usize]) -> Result<LpSolution> {
        let mut all: Vec<(usize, f64)> = fixings.to_vec();
        for &c in &self.m.binary_cols {
            all.push((c, sol.x[c].round().clamp(0.0, 1.0)));
        }
        let stored = (sol.basis.clone(), ids.to_vec());
        let (polished, _) = self.solve(&all, Some(&stored))?;
        if polished.is_optimal() {
            Ok(polished)
        } else {
            Ok(sol.clone())
        }
    }

    fn run(&mut self, cb: &mut dyn Callbacks) -> Result<()> {
        let mut heap = BinaryHeap::new();
        if let Some(start) = self.params.start.clone() {
            self.offer(start);
        }
        self.push(
            &mut heap,
            Node { fixings: Vec::new(), bound: f64::INFINITY, depth: 0, seq: 0, basis: None, retried: false },
        );
        let mut node_id = 0usize;
        while let Some(node) = heap.peek() {
            if let Some(status) = self.out_of_budget() {
                self.stats.status = status;
                break;
            }
            if node.bound <= self.incumbent_value() + PRUNE_TOL {
                // Everything left is dominated.
                heap.clear();
                break;
            }
            let node = heap.pop().expect("peeked");
            node_id += 1;
            if self.params.purge_every > 0 && node_id % self.params.purge_every == 0 {
                self.purge();
            }
            let mut rounds = 0;
            let mut basis = node.basis.clone();
            let (sol, ids) = loop {
                let (sol, ids) = self.solve(&node.fixings, basis.as_ref())?;
                self.stats.nodes_processed += usize::from(rounds == 0);
                if sol.status != LpStatus::Optimal {
                    break (sol, ids);
                }
                let bound = sol.objective.min(node.bound);
                if bound <= self.incumbent_value() + PRUNE_TOL || self.m.integrality_violation(&sol.x) <= INT_TOL {
                    break (sol, ids);
                }
                let info = NodeInfo {
                    id: node_id,
                    depth: node.depth,
                    bound,
                    incumbent: self.incumbent.as_ref().map(|i| i.objective),
                };
                let resp = cb.on_node_fraction(self.m, &sol, &info);
                for cand in resp.candidates {
                    self.offer(cand);
                }
                let violated: Vec<CutRow> = resp.cuts.into_iter().filter(|c| c.violation(&sol.x) > 1e-6).collect();
                if violated.is_empty() || rounds >= MAX_CUT_ROUNDS {
                    break (sol, ids);
                }
                self.add_cuts(violated);
                basis = Some((sol.basis.clone(), ids));
                rounds += 1;
            };
            match sol.status {
                LpStatus::Infeasible => {
                    self.record(node_id, node.depth, node.bound, "infeasible");
                    continue;
                }
                LpStatus::IterationLimit | LpStatus::Unbounded => {
                    if !node.retried {
                        log::warn!("node {node_id}: LP status {:?}, retrying with a cold start", sol.status);
                        let depth = node.depth;
                        self.push(&mut heap, Node { basis: None, retried: true, ..node });
                        self.record(node_id, depth, f64::NAN, "requeue");
                        continue;
                    }
                    // Keep the parent bound and branch on the first free binary.
                    log::warn!("node {node_id}: LP failed twice, keeping the parent bound");
                    let fixed: Vec<usize> = node.fixings.iter().map(|f| f.0).collect();
                    if let Some(&c) = self.m.binary_cols.iter().find(|c| !fixed.contains(c)) {
                        self.branch(&mut heap, &node, c, None);
                        self.record(node_id, node.depth, node.bound, "branch");
                    }
                    continue;
                }
                LpStatus::Optimal => {}
            }
            let bound = sol.objective.min(node.bound);
            if bound <= self.incumbent_value() + PRUNE_TOL {
                self.record(node_id, node.depth, bound, "pruned");
                continue;
            }
            if self.m.integrality_violation(&sol.x) <= INT_TOL {
                let polished = self.polish(&node.fixings, &sol, &ids)?;
                match cb.on_integer_solution(self.m, &polished) {
                    IntegerVerdict::Accept => {
                        let mut values = polished.x.clone();
                        for &c in &self.m.binary_cols {
                            values[c] = values[c].round();
                        }
                        values.truncate(self.m.n_cols());
                        let objective = self.m.lp.objective_value(&values);
                        if objective > self.incumbent_value() + PRUNE_TOL {
                            self.incumbent = Some(Incumbent { values, objective });
                        }
                        self.record(node_id, node.depth, bound, "integer");
                    }
                    IntegerVerdict::Reject(cuts) => {
                        if !cuts.is_empty() {
                            self.add_cuts(cuts);
                            let stored = Some((sol.basis.clone(), ids));
                            self.push(&mut heap, Node { bound, basis: stored, ..node });
                        }
                        self.record(node_id, node.depth, bound, "rejected");
                    }
                }
                continue;
            }
            let col = most_fractional(&self.m.binary_cols, &sol.x);
            let stored = (sol.basis.clone(), ids);
            let depth = node.depth;
            self.branch(&mut heap, &Node { bound, ..node }, col, Some(stored));
            self.record(node_id, depth, bound, "branch");
        }
        if heap.is_empty() {
            self.stats.status = if self.incumbent.is_some() { SolveStatus::Optimal } else { SolveStatus::Infeasible };
            self.stats.best_bound = self.incumbent_value();
        } else {
            let open = heap.iter().map(|n| n.bound).fold(f64::NEG_INFINITY, f64::max);
            self.stats.best_bound = open.max(self.incumbent_value());
        }
        Ok(())
    }

    fn branch(&mut self, heap: &mut BinaryHeap<Node>, node: &Node, col: usize, basis: Option<(Basis, Vec<usize>)>) {
        for v in [0.0, 1.0] {
            let mut fixings = node.fixings.clone();
            fixings.push((col, v));
            let child = Node {
                fixings,
                bound: node.bound,
                depth: node.depth + 1,
                seq: 0,
                basis: basis.clone(),
                retried: false,
            };
            self.push(heap, child);
        }
    }
}

/// Binary column whose value is farthest from integral; ties go to the lowest column.
fn most_fractional(cols: &[usize], x: &[f64]) -> usize {
    let mut best = cols[0];
    let mut best_frac = -1.0;
    for &c in cols {
        let f = (x[c] - x[c].floor()).min(x[c].ceil() - x[c]);
        if f > best_frac + 1e-12 {
            best = c;
            best_frac = f;
        } else if (f - best_frac).abs() <= 1e-12 && c < best {
            best = c;
        }
    }
    best
}

/// Maximizes the model; returns the best integer solution found and run statistics.
pub fn solve_milp(m: &MilpModel, params: &BnbParams, cb: &mut dyn Callbacks) -> (Option<Incumbent>, SolveStats) {
    let mut engine = Engine {
        m,
        params,
        start: Instant::now(),
        pool: Vec::new(),
        next_cut_id: 0,
        incumbent: None,
        stats: SolveStats {
            status: SolveStatus::Optimal,
            nodes_processed: 0,
            lp_iterations: 0,
            wall_time: 0.0,
            best_bound: f64::INFINITY,
            best_objective: f64::NEG_INFINITY,
            gap: 0.0,
            cuts_added: 0,
            trace: Vec::new(),
        },
        seq: 0,
    };
    if let Err(e) = engine.run(cb) {
        // A kernel error leaves the tree unexplored; report it as a limit stop
        // with the trivially valid bound.
        log::error!("branch-and-bound aborted: {e}");
        engine.stats.status = SolveStatus::TimeLimit;
        engine.stats.best_bound = f64::INFINITY;
    }
    let mut stats = engine.stats;
    stats.wall_time = engine.start.elapsed().as_secs_f64();
    stats.best_objective = engine.incumbent.as_ref().map_or(f64::NEG_INFINITY, |i| i.objective);
    stats.gap = if stats.status == SolveStatus::Optimal {
        0.0
    } else if engine.incumbent.is_some() {
        compute_gap(stats.best_bound, stats.best_objective)
    } else {
        f64::INFINITY
    };
    (engine.incumbent, stats)
}

pub fn write_trace_csv(stats: &SolveStats, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node", "depth", "bound", "incumbent", "action"])?;
    for r in &stats.trace {
        w.write_record([
            r.node.to_string(),
            r.depth.to_string(),
            r.bound.to_string(),
            r.incumbent.to_string(),
            r.action.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
