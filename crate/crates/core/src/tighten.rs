//! Pre-activation bounds: interval propagation, LP tightening and the
//! targeted procedure that spends MILP effort only on neurons whose
//! relaxation overestimates the ReLU the most.

use std::time::Instant;

use ennopt_lp::{solve_lp, warm_start_solve, Basis, LpSolution};

use crate::bnb::{solve_milp, BnbParams, Callbacks, NodeInfo, NodeResponse, SolveStatus};
use crate::error::Result;
use crate::formulation::{
    build_bigm, build_bound_subproblem, build_layer_subproblem, set_target_objective, Direction, MilpModel,
    NeuronBounds, NeuronId, NeuronStatus,
};
use crate::model::{EnsembleModel, InputBox};

#[derive(Debug, Clone)]
pub struct TightenParams {
    /// Number of branch-and-bound nodes surveyed.
    pub k: usize,
    /// Criticality threshold on the mean discrepancy (scaled output units).
    pub tau: f64,
    /// Wall limit in seconds for each bound MILP.
    pub milp_time_limit: f64,
    /// Overall wall budget in seconds for survey plus MILP tightening.
    pub budget: Option<f64>,
    /// Worker threads for the bound MILPs.
    pub threads: usize,
}

impl Default for TightenParams {
    fn default() -> Self {
        Self { k: 1000, tau: 0.01, milp_time_limit: 5.0, budget: None, threads: 1 }
    }
}

/// Outward padding applied to bounds read off a solver.
fn pad(v: f64) -> f64 {
    1e-7 * (1.0 + v.abs())
}

/// Interval bounds of layer `l` given bounds on the activations feeding it.
fn propagate(w: &[Vec<f64>], b: &[f64], act_lo: &[f64], act_hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut lo = Vec::with_capacity(b.len());
    let mut hi = Vec::with_capacity(b.len());
    for (row, bias) in w.iter().zip(b) {
        let (mut l, mut h) = (*bias, *bias);
        for (k, wk) in row.iter().enumerate() {
            if *wk >= 0.0 {
                l += wk * act_lo[k];
                h += wk * act_hi[k];
            } else {
                l += wk * act_hi[k];
                h += wk * act_lo[k];
            }
        }
        lo.push(l);
        hi.push(h);
    }
    (lo, hi)
}

fn activation_range(lb: &[f64], ub: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (lb.iter().map(|v| v.max(0.0)).collect(), ub.iter().map(|v| v.max(0.0)).collect())
}

/// Layer-by-layer interval arithmetic starting from the box.
pub fn interval_bounds(model: &EnsembleModel, domain: &InputBox) -> NeuronBounds {
    let mut out = NeuronBounds::filled(model, 0.0, 0.0);
    for (i, net) in model.networks.iter().enumerate() {
        let (mut act_lo, mut act_hi) = (domain.lo.clone(), domain.hi.clone());
        for l in 0..net.hidden_layers() {
            let layer = &net.layers[l];
            let (lo, hi) = propagate(&layer.w, &layer.b, &act_lo, &act_hi);
            (act_lo, act_hi) = activation_range(&lo, &hi);
            out.lb[i][l] = lo;
            out.ub[i][l] = hi;
        }
    }
    out
}

fn clamp_into(lo: f64, hi: f64, (a, b): (f64, f64)) -> (f64, f64) {
    let l = lo.max(a);
    let h = hi.min(b);
    if l <= h {
        (l, h)
    } else {
        // Solver noise on a degenerate range; keep the tighter of the two as a point.
        let mid = 0.5 * (l + h);
        (mid.min(b).max(a), mid.min(b).max(a))
    }
}

/// Solves the `min`/`max` LP of every neuron, layer by layer, feeding each
/// layer's tightened bounds into the next.
pub fn lp_tighten_all(model: &EnsembleModel, domain: &InputBox) -> Result<NeuronBounds> {
    let mut bounds = interval_bounds(model, domain);
    for (i, net) in model.networks.iter().enumerate() {
        for l in 1..net.hidden_layers() {
            // Interval step from the already tightened previous layer.
            let (act_lo, act_hi) = activation_range(&bounds.lb[i][l - 1], &bounds.ub[i][l - 1]);
            let layer = &net.layers[l];
            let (ilo, ihi) = propagate(&layer.w, &layer.b, &act_lo, &act_hi);
            let mut sub = build_layer_subproblem(model, i, l, true, &bounds, domain)?;
            let mut basis: Option<Basis> = None;
            for j in 0..layer.width() {
                let mut range = (ilo[j], ihi[j]);
                for dir in [Direction::Max, Direction::Min] {
                    set_target_objective(&mut sub, j, dir);
                    match solve_with_hint(&sub, basis.as_ref()) {
                        Ok(sol) if sol.is_optimal() => {
                            let v = sol.objective;
                            basis = Some(sol.basis);
                            match dir {
                                Direction::Max => range.1 = range.1.min(v + pad(v)),
                                Direction::Min => range.0 = range.0.max(-v - pad(v)),
                            }
                        }
                        Ok(sol) => {
                            log::warn!("bound LP for ({i},{l},{j}) ended with {:?}; keeping interval bound", sol.status)
                        }
                        Err(e) => log::warn!("bound LP for ({i},{l},{j}) failed: {e}; keeping interval bound"),
                    }
                }
                let (lb, ub) = clamp_into(range.0, range.1, (ilo[j], ihi[j]));
                bounds.set(NeuronId { net: i, layer: l, index: j }, lb, ub);
            }
        }
    }
    Ok(bounds)
}

fn solve_with_hint(m: &MilpModel, basis: Option<&Basis>) -> std::result::Result<LpSolution, ennopt_lp::LpError> {
    match basis {
        Some(b) => warm_start_solve(&m.lp, b),
        None => solve_lp(&m.lp),
    }
}

/// Accumulated ReLU overestimation per hidden neuron over surveyed fractional nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyLedger {
    pub sums: Vec<Vec<Vec<f64>>>,
    pub surveyed_nodes: usize,
}

impl DiscrepancyLedger {
    pub fn empty(model: &EnsembleModel) -> Self {
        Self { sums: NeuronBounds::filled(model, 0.0, 0.0).lb, surveyed_nodes: 0 }
    }

    pub fn sum(&self, id: NeuronId) -> f64 {
        self.sums[id.net][id.layer][id.index]
    }

    /// Adds the discrepancy of every modeled neuron at a relaxation point.
    pub fn accumulate(&mut self, m: &MilpModel, v: &[f64]) {
        for nv in &m.neurons {
            if nv.status == NeuronStatus::Free {
                let d = discrepancy(v[nv.h], v[nv.y]);
                self.sums[nv.id.net][nv.id.layer][nv.id.index] += d;
            }
        }
        self.surveyed_nodes += 1;
    }
}

/// How far a relaxed `y` sits above `max(0, h)`.
pub fn discrepancy(h: f64, y: f64) -> f64 {
    let d = if h < 0.0 { y } else { y - h };
    d.max(0.0)
}

struct Survey<'a> {
    model: &'a EnsembleModel,
    ledger: DiscrepancyLedger,
}

impl Callbacks for Survey<'_> {
    fn on_node_fraction(&mut self, m: &MilpModel, sol: &LpSolution, _info: &NodeInfo) -> NodeResponse {
        self.ledger.accumulate(m, &sol.x);
        let x = m.x_of(&sol.x);
        let candidates = m.point_from_input(self.model, &x).into_iter().collect();
        NodeResponse { cuts: Vec::new(), candidates }
    }
}

/// Runs the ensemble MILP for at most `k` nodes and records discrepancies at fractional nodes.
pub fn survey_discrepancies(
    model: &EnsembleModel,
    bounds: &NeuronBounds,
    domain: &InputBox,
    params: &TightenParams,
) -> Result<DiscrepancyLedger> {
    let m = build_bigm(model, bounds, domain)?;
    let mut survey = Survey { model, ledger: DiscrepancyLedger::empty(model) };
    let bp = BnbParams { node_limit: Some(params.k), time_limit: params.budget, ..BnbParams::default() };
    let (_, stats) = solve_milp(&m, &bp, &mut survey);
    log::info!("survey: {} nodes, {} fractional", stats.nodes_processed, survey.ledger.surveyed_nodes);
    Ok(survey.ledger)
}

/// Neurons whose mean discrepancy over the surveyed nodes reaches `tau`.
pub fn select_critical(ledger: &DiscrepancyLedger, params: &TightenParams) -> Vec<NeuronId> {
    if ledger.surveyed_nodes == 0 {
        return Vec::new();
    }
    let k = ledger.surveyed_nodes as f64;
    let mut out = Vec::new();
    for (net, layers) in ledger.sums.iter().enumerate() {
        for (layer, v) in layers.iter().enumerate() {
            for (index, &s) in v.iter().enumerate() {
                if s > 0.0 && s / k >= params.tau {
                    out.push(NeuronId { net, layer, index });
                }
            }
        }
    }
    out
}

/// Best valid bound on `±h` from a time-limited MILP, or `None` on failure.
fn milp_bound(
    model: &EnsembleModel,
    id: NeuronId,
    dir: Direction,
    bounds: &NeuronBounds,
    domain: &InputBox,
    limit: f64,
) -> Option<f64> {
    let m = match build_bound_subproblem(model, id, dir, false, bounds, domain) {
        Ok(m) => m,
        Err(e) => {
            log::warn!("bound MILP build for {id:?} failed: {e}");
            return None;
        }
    };
    let bp = BnbParams { time_limit: Some(limit), ..BnbParams::default() };
    let (_, stats) = solve_milp(&m, &bp, &mut crate::bnb::NoCallbacks);
    if stats.status == SolveStatus::Infeasible || !stats.best_bound.is_finite() {
        log::warn!("bound MILP for {id:?} returned no usable bound ({:?})", stats.status);
        return None;
    }
    Some(stats.best_bound)
}

/// Replaces the bounds of each critical neuron by time-limited MILP bounds
/// (the solver's dual bound), intersected with the incoming ones.
pub fn milp_tighten_critical(
    model: &EnsembleModel,
    critical: &[NeuronId],
    bounds: &NeuronBounds,
    domain: &InputBox,
    params: &TightenParams,
) -> NeuronBounds {
    let start = Instant::now();
    let jobs: Vec<(NeuronId, Direction)> =
        critical.iter().flat_map(|&id| [(id, Direction::Max), (id, Direction::Min)]).collect();
    let run = |&(id, dir): &(NeuronId, Direction)| -> Option<f64> {
        let mut limit = params.milp_time_limit;
        if let Some(budget) = params.budget {
            let left = budget - start.elapsed().as_secs_f64();
            if left <= 0.0 {
                return None;
            }
            limit = limit.min(left);
        }
        milp_bound(model, id, dir, bounds, domain, limit)
    };
    let results: Vec<Option<f64>> = if params.threads <= 1 {
        jobs.iter().map(run).collect()
    } else {
        let chunk = jobs.len().div_ceil(params.threads).max(1);
        std::thread::scope(|s| {
            let handles: Vec<_> =
                jobs.chunks(chunk).map(|c| s.spawn(move || c.iter().map(run).collect::<Vec<_>>())).collect();
            handles.into_iter().flat_map(|h| h.join().expect("bound worker panicked")).collect()
        })
    };
    let mut out = bounds.clone();
    for (&(id, dir), r) in jobs.iter().zip(results) {
        let Some(v) = r else { continue };
        let (lb, ub) = out.get(id);
        let (lb, ub) = match dir {
            Direction::Max => clamp_into(lb, v + pad(v), (lb, ub)),
            Direction::Min => clamp_into(-v - pad(v), ub, (lb, ub)),
        };
        out.set(id, lb, ub);
    }
    out
}

/// All bound stages produced by the targeted procedure.
#[derive(Debug, Clone)]
pub struct BoundStages {
    pub interval: NeuronBounds,
    pub lp: NeuronBounds,
    pub ledger: DiscrepancyLedger,
    pub critical: Vec<NeuronId>,
    pub targeted: NeuronBounds,
}

/// LP tightening, a K-node survey, and MILP tightening of the critical neurons.
pub fn targeted_bounds(model: &EnsembleModel, domain: &InputBox, params: &TightenParams) -> Result<BoundStages> {
    let start = Instant::now();
    let interval = interval_bounds(model, domain);
    let lp = lp_tighten_all(model, domain)?;
    let left = params.budget.map(|b| (b - start.elapsed().as_secs_f64()).max(0.0));
    let ledger = survey_discrepancies(model, &lp, domain, &TightenParams { budget: left, ..params.clone() })?;
    let critical = select_critical(&ledger, params);
    log::info!("{} critical neurons out of {}", critical.len(), lp.free_count());
    let left = params.budget.map(|b| (b - start.elapsed().as_secs_f64()).max(0.0));
    let targeted =
        milp_tighten_critical(model, &critical, &lp, domain, &TightenParams { budget: left, ..params.clone() });
    Ok(BoundStages { interval, lp, ledger, critical, targeted })
}
