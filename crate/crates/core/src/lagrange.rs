//! Phase two: Lagrangian decomposition of the ensemble with spatial
//! branch-and-bound on the input box.
//!
//! Each network gets its own copy of `x`. Dualizing `x^1 = x^i` with
//! multipliers `lambda_i` splits the problem into one MILP per network:
//! network 1 maximizes `(1/e) y^1 + (sum_i lambda_i) . x`, network `i >= 2`
//! maximizes `(1/e) y^i - lambda_i . x`. The sum of their optima bounds the
//! ensemble optimum over the box for every `lambda`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;
use std::time::Instant;

use ennopt_lp::solve_lp;
use serde::Serialize;

use crate::benders::CutSeparator;
use crate::bnb::{compute_gap, solve_milp, BnbParams, SolveStats, SolveStatus};
use crate::error::{Error, Result};
use crate::formulation::{build_bigm, build_single_network_bigm, MilpModel, NeuronBounds, NeuronId};
use crate::model::{forward_ensemble, EnsembleModel, InputBox};
use crate::tighten::interval_bounds;

#[derive(Debug, Clone, Serialize)]
pub struct Phase2Params {
    /// Small-domain threshold on every box width.
    pub delta: f64,
    /// Half-width of the primal heuristic box.
    pub epsilon: f64,
    pub mu0: f64,
    /// Subgradient iterations before the tree search.
    pub q_init: usize,
    /// Wall limit in seconds for the whole phase.
    pub time_limit: f64,
    /// Wall cap in seconds for each Lagrangian subproblem MILP.
    pub sub_time_cap: f64,
    /// Wall cap in seconds for each primal heuristic MILP.
    pub heuristic_time_cap: f64,
    pub threads: usize,
    pub trace: bool,
}

impl Default for Phase2Params {
    fn default() -> Self {
        Self {
            delta: 0.02,
            epsilon: 0.02,
            mu0: 0.05,
            q_init: 20,
            time_limit: 3600.0,
            sub_time_cap: 10.0,
            heuristic_time_cap: 5.0,
            threads: 1,
            trace: false,
        }
    }
}

/// `lambda[i - 1][j]` multiplies `x^1_j - x^i_j` for networks `i = 2..e`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagrangianMultipliers {
    pub lambda: Vec<Vec<f64>>,
}

impl LagrangianMultipliers {
    pub fn zeros(e: usize, n: usize) -> Self {
        Self { lambda: vec![vec![0.0; n]; e.saturating_sub(1)] }
    }

    /// Linear objective term on `x` for network `i`.
    pub fn term(&self, i: usize, n: usize) -> Vec<f64> {
        if i == 0 {
            let mut t = vec![0.0; n];
            for row in &self.lambda {
                for (tj, l) in t.iter_mut().zip(row) {
                    *tj += l;
                }
            }
            t
        } else {
            self.lambda[i - 1].iter().map(|v| -v).collect()
        }
    }

    /// `lambda_i <- lambda_i - mu (x^1 - x^i)`.
    pub fn step(&mut self, mu: f64, copies: &[Vec<f64>]) {
        for (i, row) in self.lambda.iter_mut().enumerate() {
            for (j, l) in row.iter_mut().enumerate() {
                *l -= mu * (copies[0][j] - copies[i + 1][j]);
            }
        }
    }
}

/// Step size schedule `mu^q = mu^(q-1) / sqrt(q)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubgradientState {
    pub mu: f64,
    pub q: usize,
}

impl SubgradientState {
    pub fn new(mu0: f64) -> Self {
        Self { mu: mu0, q: 0 }
    }

    /// Advances `q` and returns the new step size.
    pub fn advance(&mut self) -> f64 {
        self.q += 1;
        self.mu /= (self.q as f64).sqrt();
        self.mu
    }
}

/// Binary values keyed by neuron, so patterns transfer between full and single-network models.
pub type Pattern = BTreeMap<NeuronId, f64>;

pub fn pattern_of(m: &MilpModel, values: &[f64]) -> Pattern {
    m.neurons.iter().filter_map(|nv| nv.z.map(|z| (nv.id, values[z].round()))).collect()
}

/// Activation pattern of the ensemble at `x` (1 where the pre-activation is positive).
pub fn pattern_at(model: &EnsembleModel, x: &[f64]) -> Pattern {
    let mut p = Pattern::new();
    for (net, n) in model.networks.iter().enumerate() {
        let (hidden, _) = n.trace(x);
        for (layer, h) in hidden.iter().enumerate() {
            for (index, v) in h.iter().enumerate() {
                p.insert(NeuronId { net, layer, index }, if *v > 0.0 { 1.0 } else { 0.0 });
            }
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagResult {
    /// Sum of the subproblem bounds.
    pub bound: f64,
    /// Maximizer `x^i` of each subproblem.
    pub x_copies: Vec<Vec<f64>>,
    /// Whether every subproblem was solved to optimality.
    pub exact: bool,
}

/// Bounds valid on `domain`: the global ones intersected with fresh interval bounds.
pub fn node_bounds(model: &EnsembleModel, global: &NeuronBounds, domain: &InputBox) -> NeuronBounds {
    global.intersect(&interval_bounds(model, domain))
}

fn check_shape(model: &EnsembleModel, lambda: &LagrangianMultipliers) -> Result<()> {
    let e = model.ensemble_size();
    if lambda.lambda.len() != e - 1 || lambda.lambda.iter().any(|r| r.len() != model.input_dim) {
        return Err(Error::Parameter(format!("multipliers must be {}x{}", e - 1, model.input_dim)));
    }
    Ok(())
}

/// Solves the `e` decoupled subproblems over `domain`. With `z_fixed` each is
/// the LP at that pattern; otherwise a MILP capped at `time_cap` seconds,
/// whose dual bound is used if the cap interrupts it. `Ok(None)` means some
/// subproblem is infeasible.
pub fn solve_lag_relaxation(
    model: &EnsembleModel,
    bounds: &NeuronBounds,
    lambda: &LagrangianMultipliers,
    domain: &InputBox,
    z_fixed: Option<&Pattern>,
    time_cap: f64,
    threads: usize,
) -> Result<Option<LagResult>> {
    check_shape(model, lambda)?;
    let n = model.input_dim;
    let solve_one = |i: usize| -> Result<Option<(f64, Vec<f64>, bool)>> {
        let mut m = build_single_network_bigm(model, i, bounds, domain, &lambda.term(i, n))?;
        if let Some(p) = z_fixed {
            let z: Vec<f64> =
                m.neurons.iter().filter_map(|nv| nv.z.map(|_| p.get(&nv.id).copied().unwrap_or(0.0))).collect();
            m.fix_binaries(&z);
            let sol = solve_lp(&m.lp)?;
            if !sol.is_optimal() {
                return Ok(None);
            }
            return Ok(Some((sol.objective, m.x_of(&sol.x), true)));
        }
        let params = BnbParams { time_limit: Some(time_cap.max(0.0)), ..BnbParams::default() };
        let mut cb = CutSeparator::new(model, false);
        let (inc, stats) = solve_milp(&m, &params, &mut cb);
        match stats.status {
            SolveStatus::Infeasible => Ok(None),
            status => {
                let x = inc.map_or_else(|| domain.center(), |i| m.x_of(&i.values));
                Ok(Some((stats.best_bound, x, status == SolveStatus::Optimal)))
            }
        }
    };
    let e = model.ensemble_size();
    let results: Vec<Result<Option<(f64, Vec<f64>, bool)>>> = if threads <= 1 {
        (0..e).map(solve_one).collect()
    } else {
        let chunk = e.div_ceil(threads);
        std::thread::scope(|s| {
            let f = &solve_one;
            let handles: Vec<_> = (0..e)
                .collect::<Vec<_>>()
                .chunks(chunk)
                .map(|c| {
                    let c = c.to_vec();
                    s.spawn(move || c.into_iter().map(f).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("subproblem worker panicked")).collect()
        })
    };
    let mut bound = 0.0;
    let mut x_copies = Vec::with_capacity(e);
    let mut exact = true;
    for r in results {
        match r? {
            None => return Ok(None),
            Some((b, x, ex)) => {
                bound += b;
                x_copies.push(domain.clamp(&x));
                exact &= ex;
            }
        }
    }
    Ok(Some(LagResult { bound, x_copies, exact }))
}

/// Runs `q_init` subgradient iterations on the LP relaxation with the
/// binaries fixed at `z_bar`, starting from zero multipliers.
pub fn subgradient_init(
    model: &EnsembleModel,
    bounds: &NeuronBounds,
    z_bar: &Pattern,
    params: &Phase2Params,
) -> Result<(LagrangianMultipliers, SubgradientState)> {
    let mut lambda = LagrangianMultipliers::zeros(model.ensemble_size(), model.input_dim);
    let mut state = SubgradientState::new(params.mu0);
    for _ in 0..params.q_init {
        let Some(r) = solve_lag_relaxation(model, bounds, &lambda, &model.domain, Some(z_bar), f64::INFINITY, 1)?
        else {
            log::warn!("fixed-pattern relaxation infeasible; stopping the subgradient warm-up");
            break;
        };
        let mu = state.advance();
        lambda.step(mu, &r.x_copies);
    }
    Ok((lambda, state))
}

/// Coordinate of largest disagreement among the copies and the two child boxes.
/// Returns `None` when all copies coincide.
pub fn select_branch_and_split(domain: &InputBox, copies: &[Vec<f64>]) -> Option<(usize, InputBox, InputBox)> {
    let n = domain.dim();
    let mut best = (0, 0.0, 0.0, 0.0);
    for j in 0..n {
        let hi = copies.iter().map(|c| c[j]).fold(f64::NEG_INFINITY, f64::max);
        let lo = copies.iter().map(|c| c[j]).fold(f64::INFINITY, f64::min);
        if hi - lo > best.1 {
            best = (j, hi - lo, lo, hi);
        }
    }
    let (j, spread, lo, hi) = best;
    if spread <= 0.0 {
        return None;
    }
    let mid = (0.5 * (lo + hi)).clamp(domain.lo[j], domain.hi[j]);
    let mut left = domain.clone();
    let mut right = domain.clone();
    left.hi[j] = mid;
    right.lo[j] = mid;
    Some((j, left, right))
}

pub fn small_domain_check(domain: &InputBox, delta: f64) -> bool {
    domain.widths().iter().all(|w| *w <= delta)
}

/// Optimizes network 1 alone inside `x_hat ± epsilon` and evaluates the
/// ensemble at the result. Falls back to `x_hat` when that is better.
pub fn primal_heuristic(
    model: &EnsembleModel,
    bounds: &NeuronBounds,
    x_hat: &[f64],
    epsilon: f64,
    time_cap: f64,
) -> Result<(Vec<f64>, f64)> {
    let root = &model.domain;
    let x_hat = root.clamp(x_hat);
    let mut best = (x_hat.clone(), forward_ensemble(model, &x_hat)?);
    if epsilon <= 0.0 || time_cap <= 0.0 {
        return Ok(best);
    }
    let local =
        InputBox { lo: x_hat.iter().map(|v| v - epsilon).collect(), hi: x_hat.iter().map(|v| v + epsilon).collect() };
    let local = root.intersect(&local);
    let nb = node_bounds(model, bounds, &local);
    let m = build_single_network_bigm(model, 0, &nb, &local, &vec![0.0; model.input_dim])?;
    let params = BnbParams { time_limit: Some(time_cap), ..BnbParams::default() };
    let (inc, _) = solve_milp(&m, &params, &mut CutSeparator::new(model, false));
    if let Some(inc) = inc {
        let x = root.clamp(&m.x_of(&inc.values));
        let v = forward_ensemble(model, &x)?;
        if v > best.1 {
            best = (x, v);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Serialize)]
pub struct Phase2TraceRow {
    pub node: usize,
    pub widths: Vec<f64>,
    pub bound: f64,
    pub incumbent: f64,
    pub action: &'static str,
}

#[derive(Debug, Clone)]
pub struct Phase2Result {
    pub x: Vec<f64>,
    pub objective: f64,
    pub stats: SolveStats,
    pub lambda: LagrangianMultipliers,
    pub trace: Vec<Phase2TraceRow>,
}

struct SpatialNode {
    domain: InputBox,
    bound: f64,
    depth: usize,
    seq: usize,
}

impl PartialEq for SpatialNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SpatialNode {}

impl PartialOrd for SpatialNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SpatialNode {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.depth.cmp(&self.depth))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn prune_tol(v: f64) -> f64 {
    1e-7 * v.abs().max(1.0)
}

struct Search<'a> {
    model: &'a EnsembleModel,
    bounds: &'a NeuronBounds,
    params: &'a Phase2Params,
    start: Instant,
    best_x: Vec<f64>,
    best: f64,
    trace: Vec<Phase2TraceRow>,
    nodes: usize,
    lp_iterations: usize,
}

impl Search<'_> {
    fn left(&self) -> f64 {
        self.params.time_limit - self.start.elapsed().as_secs_f64()
    }

    fn offer(&mut self, x: &[f64], v: f64) {
        if v > self.best {
            self.best = v;
            self.best_x = x.to_vec();
        }
    }

    fn log(&mut self, node: usize, domain: &InputBox, bound: f64, action: &'static str) {
        if self.params.trace {
            self.trace.push(Phase2TraceRow { node, widths: domain.widths(), bound, incumbent: self.best, action });
        }
    }

    /// Solves the exact ensemble model on a node box; returns the node's remaining bound.
    fn bigm_fallback(&mut self, domain: &InputBox) -> Result<f64> {
        let nb = node_bounds(self.model, self.bounds, domain);
        let m = build_bigm(self.model, &nb, domain)?;
        let params = BnbParams { time_limit: Some(self.left().max(0.0)), ..BnbParams::default() };
        let (inc, stats) = solve_milp(&m, &params, &mut CutSeparator::new(self.model, false));
        self.lp_iterations += stats.lp_iterations;
        if let Some(inc) = inc {
            let x = self.model.domain.clamp(&m.x_of(&inc.values));
            let v = forward_ensemble(self.model, &x)?;
            self.offer(&x, v);
        }
        Ok(match stats.status {
            SolveStatus::Optimal | SolveStatus::Infeasible => f64::NEG_INFINITY,
            _ => stats.best_bound,
        })
    }
}

/// Best-first spatial branch-and-bound over the input box using Lagrangian bounds.
/// `start` is the phase-one incumbent `(x, value)`; `z_bar` its activation pattern.
pub fn phase_two_solve(
    model: &EnsembleModel,
    bounds: &NeuronBounds,
    start: (&[f64], f64),
    z_bar: &Pattern,
    params: &Phase2Params,
) -> Result<Phase2Result> {
    if model.ensemble_size() < 2 {
        return Err(Error::Precondition("phase two needs an ensemble of at least two networks".into()));
    }
    let t0 = Instant::now();
    let (mut lambda, mut state) = subgradient_init(model, bounds, z_bar, params)?;
    let mut s = Search {
        model,
        bounds,
        params,
        start: t0,
        best_x: start.0.to_vec(),
        best: start.1,
        trace: Vec::new(),
        nodes: 0,
        lp_iterations: 0,
    };
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    heap.push(SpatialNode { domain: model.domain.clone(), bound: f64::INFINITY, depth: 0, seq });
    let mut global_bound = f64::INFINITY;
    let mut status = SolveStatus::Optimal;
    while let Some(top) = heap.peek() {
        if top.bound <= s.best + prune_tol(s.best) {
            heap.clear();
            break;
        }
        if s.nodes > 0 && s.left() <= 0.0 {
            status = SolveStatus::TimeLimit;
            break;
        }
        let node = heap.pop().expect("peeked");
        s.nodes += 1;
        let id = s.nodes;
        if small_domain_check(&node.domain, params.delta) {
            let rest = s.bigm_fallback(&node.domain)?.min(node.bound);
            s.log(id, &node.domain, rest, "bigm-fallback");
            if rest > s.best + prune_tol(s.best) {
                seq += 1;
                heap.push(SpatialNode { bound: rest, seq, ..node });
            }
            continue;
        }
        let nb = node_bounds(model, bounds, &node.domain);
        let cap = params.sub_time_cap.min(s.left().max(0.0));
        let Some(r) = solve_lag_relaxation(model, &nb, &lambda, &node.domain, None, cap, params.threads)? else {
            s.log(id, &node.domain, f64::NEG_INFINITY, "pruned");
            continue;
        };
        let bound = r.bound.min(node.bound);
        let mu = state.advance();
        lambda.step(mu, &r.x_copies);
        for x in &r.x_copies {
            let v = forward_ensemble(model, x)?;
            s.offer(x, v);
        }
        if bound <= s.best + prune_tol(s.best) {
            s.log(id, &node.domain, bound, "pruned");
            continue;
        }
        let (hx, hv) = primal_heuristic(
            model,
            bounds,
            &r.x_copies[0],
            params.epsilon,
            params.heuristic_time_cap.min(s.left().max(0.0)),
        )?;
        s.offer(&hx, hv);
        if bound <= s.best + prune_tol(s.best) {
            s.log(id, &node.domain, bound, "pruned");
            continue;
        }
        match select_branch_and_split(&node.domain, &r.x_copies) {
            Some((_, left, right)) => {
                s.log(id, &node.domain, bound, "branch");
                for child in [left, right] {
                    seq += 1;
                    heap.push(SpatialNode { domain: child, bound, depth: node.depth + 1, seq });
                }
            }
            None => {
                // The copies agree: the common point is feasible; settle the box exactly.
                let rest = s.bigm_fallback(&node.domain)?.min(bound);
                s.log(id, &node.domain, rest, "bigm-fallback");
                if rest > s.best + prune_tol(s.best) {
                    seq += 1;
                    heap.push(SpatialNode { domain: node.domain, bound: rest, depth: node.depth, seq });
                }
            }
        }
        let open = heap.iter().map(|n| n.bound).fold(f64::NEG_INFINITY, f64::max);
        global_bound = global_bound.min(open.max(s.best));
    }
    let bound = if heap.is_empty() {
        s.best
    } else {
        global_bound.min(heap.iter().map(|n| n.bound).fold(f64::NEG_INFINITY, f64::max).max(s.best))
    };
    let gap = if heap.is_empty() { 0.0 } else { compute_gap(bound, s.best) };
    let stats = SolveStats {
        status: if heap.is_empty() { SolveStatus::Optimal } else { status },
        nodes_processed: s.nodes,
        lp_iterations: s.lp_iterations,
        wall_time: t0.elapsed().as_secs_f64(),
        best_bound: bound,
        best_objective: s.best,
        gap,
        cuts_added: 0,
        trace: Vec::new(),
    };
    Ok(Phase2Result { x: s.best_x, objective: s.best, stats, lambda, trace: s.trace })
}

pub fn write_trace_csv(trace: &[Phase2TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node", "widths", "bound", "incumbent", "action"])?;
    for r in trace {
        let widths: Vec<String> = r.widths.iter().map(|v| v.to_string()).collect();
        w.write_record([
            r.node.to_string(),
            widths.join(";"),
            r.bound.to_string(),
            r.incumbent.to_string(),
            r.action.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
