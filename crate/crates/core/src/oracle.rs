//! Reference solvers used to check the optimizer on small instances.
//!
//! On a fixed activation pattern every network is affine in `x`, so the
//! ensemble optimum is the best of one small LP per feasible pattern.

use ennopt_lp::{solve_lp, LpProblem, Relation, Sense};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formulation::NeuronStatus;
use crate::model::{forward_ensemble, EnsembleModel, InputBox};
use crate::tighten::interval_bounds;

/// Most free neurons the exact enumeration accepts.
pub const MAX_FREE_NEURONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    /// Optimal input in scaled units.
    pub x: Vec<f64>,
    /// Optimal ensemble value in the model's own sense (scaled units).
    pub value: f64,
    pub free_neurons: usize,
    pub feasible_patterns: usize,
}

/// Affine function `coef . x + constant`.
#[derive(Clone)]
struct Affine {
    coef: Vec<f64>,
    constant: f64,
}

enum Act {
    Zero,
    Linear(Affine),
}

/// Global optimum by enumerating the activation patterns of all free neurons.
pub fn enumerate_patterns_exact(model: &EnsembleModel, domain: &InputBox) -> Result<OracleResult> {
    enumerate_patterns_exact_threads(model, domain, 1)
}

pub fn enumerate_patterns_exact_threads(
    model: &EnsembleModel,
    domain: &InputBox,
    threads: usize,
) -> Result<OracleResult> {
    let max_form = model.to_max_form();
    let bounds = interval_bounds(&max_form, domain);
    let free = bounds.free_count();
    if free > MAX_FREE_NEURONS {
        return Err(Error::OracleCap { free, cap: MAX_FREE_NEURONS });
    }
    let total: u64 = 1 << free;
    let solve_range = |lo: u64, hi: u64| -> (Option<(f64, Vec<f64>, u64)>, usize) {
        let mut best: Option<(f64, Vec<f64>, u64)> = None;
        let mut feasible = 0;
        for pattern in lo..hi {
            if let Some((v, x)) = pattern_optimum(&max_form, &bounds, domain, pattern) {
                feasible += 1;
                if best.as_ref().map_or(true, |b| v > b.0) {
                    best = Some((v, x, pattern));
                }
            }
        }
        (best, feasible)
    };
    let parts: Vec<(Option<(f64, Vec<f64>, u64)>, usize)> = if threads <= 1 || total < 64 {
        vec![solve_range(0, total)]
    } else {
        let step = total.div_ceil(threads as u64);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads as u64)
                .map(|t| {
                    let f = &solve_range;
                    s.spawn(move || f((t * step).min(total), ((t + 1) * step).min(total)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("oracle worker panicked")).collect()
        })
    };
    let mut best: Option<(f64, Vec<f64>, u64)> = None;
    let mut feasible = 0;
    for (b, f) in parts {
        feasible += f;
        if let Some(b) = b {
            // Parts are in pattern order, so strict improvement keeps the smallest pattern on ties.
            if best.as_ref().map_or(true, |cur| b.0 > cur.0) {
                best = Some(b);
            }
        }
    }
    let (v, x, _) = best.ok_or_else(|| Error::Numeric("no activation pattern admits a feasible point".into()))?;
    Ok(OracleResult { x, value: model.objective_sign() * v, free_neurons: free, feasible_patterns: feasible })
}

/// Best value of the max-form ensemble restricted to one activation pattern.
fn pattern_optimum(
    model: &EnsembleModel,
    bounds: &crate::formulation::NeuronBounds,
    domain: &InputBox,
    pattern: u64,
) -> Option<(f64, Vec<f64>)> {
    let n = model.input_dim;
    let mut lp = LpProblem::new(n, Sense::Maximize);
    lp.col_lo = domain.lo.clone();
    lp.col_hi = domain.hi.clone();
    let mut bit = 0;
    let e = model.ensemble_size() as f64;
    let mut objective = vec![0.0; n];
    let mut constant = 0.0;
    for (i, net) in model.networks.iter().enumerate() {
        let mut prev: Vec<Act> = (0..n)
            .map(|k| {
                let mut coef = vec![0.0; n];
                coef[k] = 1.0;
                Act::Linear(Affine { coef, constant: 0.0 })
            })
            .collect();
        for l in 0..net.hidden_layers() {
            let layer = &net.layers[l];
            let mut next = Vec::with_capacity(layer.width());
            for j in 0..layer.width() {
                let h = compose(&layer.w[j], layer.b[j], &prev, n);
                match NeuronStatus::from_bounds(bounds.lb[i][l][j], bounds.ub[i][l][j]) {
                    NeuronStatus::AlwaysInactive => next.push(Act::Zero),
                    NeuronStatus::AlwaysActive => next.push(Act::Linear(h)),
                    NeuronStatus::Free => {
                        let active = pattern >> bit & 1 == 1;
                        bit += 1;
                        let coeffs: Vec<(usize, f64)> =
                            h.coef.iter().copied().enumerate().filter(|p| p.1 != 0.0).collect();
                        if active {
                            lp.add_row(coeffs, Relation::Ge, -h.constant);
                            next.push(Act::Linear(h));
                        } else {
                            lp.add_row(coeffs, Relation::Le, -h.constant);
                            next.push(Act::Zero);
                        }
                    }
                }
            }
            prev = next;
        }
        let out = net.output_layer();
        let o = compose(&out.w[0], out.b[0], &prev, n);
        for k in 0..n {
            objective[k] += o.coef[k] / e;
        }
        constant += o.constant / e;
    }
    // Rows with no coefficients are either trivially true or make the pattern empty.
    for row in &lp.rows {
        if row.coeffs.is_empty() && row.violation(&[]) > 1e-12 {
            return None;
        }
    }
    lp.rows.retain(|r| !r.coeffs.is_empty());
    lp.objective = objective;
    let sol = solve_lp(&lp).ok()?;
    if !sol.is_optimal() {
        return None;
    }
    // Report the exact value at the LP point; ties at h = 0 are harmless.
    let x = domain.clamp(&sol.x);
    let v = forward_ensemble(model, &x).ok()?;
    debug_assert!((v - sol.objective - constant).abs() < 1e-6 * (1.0 + v.abs()));
    Some((v, x))
}

fn compose(w: &[f64], b: f64, prev: &[Act], n: usize) -> Affine {
    let mut coef = vec![0.0; n];
    let mut constant = b;
    for (k, act) in prev.iter().enumerate() {
        if let Act::Linear(a) = act {
            if w[k] != 0.0 {
                for t in 0..n {
                    coef[t] += w[k] * a.coef[t];
                }
                constant += w[k] * a.constant;
            }
        }
    }
    Affine { coef, constant }
}

/// Best ensemble value over a uniform grid with `points_per_dim` points per axis.
/// A single point per axis means the box midpoint.
pub fn grid_search(model: &EnsembleModel, domain: &InputBox, points_per_dim: usize) -> Result<(Vec<f64>, f64)> {
    let n = domain.dim();
    let p = points_per_dim.max(1);
    let axis = |k: usize, t: usize| -> f64 {
        if p == 1 {
            0.5 * (domain.lo[k] + domain.hi[k])
        } else {
            domain.lo[k] + (domain.hi[k] - domain.lo[k]) * t as f64 / (p - 1) as f64
        }
    };
    let sign = model.objective_sign();
    let mut idx = vec![0usize; n];
    let mut best: Option<(Vec<f64>, f64)> = None;
    loop {
        let x: Vec<f64> = (0..n).map(|k| axis(k, idx[k])).collect();
        let v = forward_ensemble(model, &x)?;
        if best.as_ref().map_or(true, |b| sign * v > sign * b.1) {
            best = Some((x, v));
        }
        let mut k = 0;
        while k < n {
            idx[k] += 1;
            if idx[k] < p {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    Ok(best.expect("grid has at least one point"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Re-evaluates a claimed solution and, when the enumeration applies,
/// compares it to the exact optimum. `x` and `value` are in scaled units.
pub fn verify_solution(model: &EnsembleModel, x: &[f64], value: f64, tol: f64) -> Verdict {
    let mut failures = Vec::new();
    if !model.domain.contains(x, 1e-9) {
        failures.push("x outside the box".to_string());
    }
    match forward_ensemble(model, &model.domain.clamp(x)) {
        Ok(v) if (v - value).abs() <= tol => {}
        Ok(v) => failures.push(format!("objective mismatch: reported {value}, recomputed {v}")),
        Err(e) => failures.push(format!("evaluation failed: {e}")),
    }
    match enumerate_patterns_exact(model, &model.domain) {
        Ok(o) if (o.value - value).abs() <= tol => {}
        Ok(o) => failures.push(format!("oracle mismatch: reported {value}, exact optimum {}", o.value)),
        Err(Error::OracleCap { .. }) => {}
        Err(e) => failures.push(format!("oracle failed: {e}")),
    }
    Verdict { passed: failures.is_empty(), failures }
}
