//! Brute-force vertex enumeration for small LPs with finite column bounds.

use ennopt_lp::{LpProblem, Relation, Sense};

/// Constraint written as `a . x = b` when active.
fn active_sets(p: &LpProblem) -> Vec<(Vec<f64>, f64)> {
    let n = p.n_cols;
    let mut out = Vec::new();
    for row in &p.rows {
        let mut a = vec![0.0; n];
        for &(j, v) in &row.coeffs {
            a[j] += v;
        }
        out.push((a, row.rhs));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        out.push((e.clone(), p.col_lo[j]));
        out.push((e, p.col_hi[j]));
    }
    out
}

fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[p][k].abs() < 1e-10 {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in (k + 1)..n {
            let f = a[i][k] / a[k][k];
            for c in k..n {
                a[i][c] -= f * a[k][c];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|c| a[i][c] * x[c]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

fn combinations(m: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..m {
            if m - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, m, k, cur, f);
            cur.pop();
        }
    }
    rec(0, m, k, &mut Vec::new(), f);
}

/// Best objective over all feasible vertices, or `None` when no vertex is feasible.
pub fn vertex_optimum(p: &LpProblem) -> Option<f64> {
    let n = p.n_cols;
    let cons = active_sets(p);
    let mut best: Option<f64> = None;
    combinations(cons.len(), n, &mut |idx| {
        let a: Vec<Vec<f64>> = idx.iter().map(|&i| cons[i].0.clone()).collect();
        let b: Vec<f64> = idx.iter().map(|&i| cons[i].1).collect();
        if let Some(x) = solve_square(a, b) {
            if p.max_violation(&x) <= 1e-9 {
                let v = p.objective_value(&x);
                best = Some(match (best, p.sense) {
                    (None, _) => v,
                    (Some(b), Sense::Maximize) => b.max(v),
                    (Some(b), Sense::Minimize) => b.min(v),
                });
            }
        }
    });
    best
}

/// Random bounded LP with at most `max_dim` columns and rows.
pub fn random_lp(rng: &mut impl rand::Rng, max_dim: usize) -> LpProblem {
    let n = rng.gen_range(1..=max_dim);
    let m = rng.gen_range(1..=max_dim);
    let sense = if rng.gen_bool(0.5) { Sense::Maximize } else { Sense::Minimize };
    let mut p = LpProblem::new(n, sense);
    for j in 0..n {
        let lo: f64 = rng.gen_range(-3.0..1.0);
        p.col_lo[j] = lo;
        p.col_hi[j] = lo + rng.gen_range(0.5..4.0);
        p.objective[j] = rng.gen_range(-5.0..5.0);
    }
    let anchor: Vec<f64> = (0..n).map(|j| rng.gen_range(p.col_lo[j]..p.col_hi[j])).collect();
    let force_infeasible = rng.gen_bool(0.1);
    for r in 0..m {
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        for j in 0..n {
            if rng.gen_bool(0.8) {
                coeffs.push((j, rng.gen_range(-5.0..5.0)));
            }
        }
        let act: f64 = coeffs.iter().map(|&(j, a)| a * anchor[j]).sum();
        let roll: f64 = rng.gen();
        let (rel, rhs) = if roll < 0.6 {
            (Relation::Le, act + rng.gen_range(0.0..3.0))
        } else if roll < 0.9 {
            (Relation::Ge, act - rng.gen_range(0.0..3.0))
        } else {
            (Relation::Eq, act)
        };
        let rhs = if force_infeasible && r == 0 { rhs + if rel == Relation::Ge { 100.0 } else { -100.0 } } else { rhs };
        p.add_row(coeffs, rel, rhs);
    }
    p
}
