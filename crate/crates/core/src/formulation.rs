//! Big-M mixed-integer encodings of ReLU ensembles.
//!
//! Column layout: the `n` input columns come first, followed by the neuron
//! columns of each included network in layer order. A free neuron owns the
//! columns `h`, `y`, `z` and four rows
//!
//! ```text
//! h - W y_prev          = b       (definition)
//! y - h                >= 0
//! y - h - LB z         <= -LB
//! y - UB z             <= 0
//! ```
//!
//! An always-active neuron owns `h` and `y` with `y - h = 0`; an
//! always-inactive neuron owns nothing and is dropped from downstream rows.
//! Each network ends in a single output column `o` with `o - W y_prev = b`.
//! The first-layer activations are the input columns themselves.

use std::fmt::Write as _;
use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use ennopt_lp::{LpProblem, Relation, Sense};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{EnsembleModel, InputBox, ObjectiveSense};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronStatus {
    Free,
    AlwaysActive,
    AlwaysInactive,
}

impl NeuronStatus {
    pub fn from_bounds(lb: f64, ub: f64) -> Self {
        if ub <= 0.0 {
            NeuronStatus::AlwaysInactive
        } else if lb >= 0.0 {
            NeuronStatus::AlwaysActive
        } else {
            NeuronStatus::Free
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NeuronStatus::Free => "free",
            NeuronStatus::AlwaysActive => "always_active",
            NeuronStatus::AlwaysInactive => "always_inactive",
        }
    }
}

/// Identifies hidden neuron `j` of hidden layer `l` in network `i` (all zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NeuronId {
    pub net: usize,
    pub layer: usize,
    pub index: usize,
}

/// Pre-activation bounds for every hidden neuron, indexed `[net][layer][neuron]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronBounds {
    pub lb: Vec<Vec<Vec<f64>>>,
    pub ub: Vec<Vec<Vec<f64>>>,
}

impl NeuronBounds {
    /// Bounds of the right shape for `model`, all set to `[lo, hi]`.
    pub fn filled(model: &EnsembleModel, lo: f64, hi: f64) -> Self {
        let shape = |v: f64| -> Vec<Vec<Vec<f64>>> {
            model.networks.iter().map(|n| n.hidden_widths().iter().map(|&w| vec![v; w]).collect()).collect()
        };
        Self { lb: shape(lo), ub: shape(hi) }
    }

    pub fn get(&self, id: NeuronId) -> (f64, f64) {
        (self.lb[id.net][id.layer][id.index], self.ub[id.net][id.layer][id.index])
    }

    pub fn set(&mut self, id: NeuronId, lb: f64, ub: f64) {
        self.lb[id.net][id.layer][id.index] = lb;
        self.ub[id.net][id.layer][id.index] = ub;
    }

    pub fn status(&self, id: NeuronId) -> NeuronStatus {
        let (lb, ub) = self.get(id);
        NeuronStatus::from_bounds(lb, ub)
    }

    pub fn ids(&self) -> Vec<NeuronId> {
        let mut out = Vec::new();
        for (net, layers) in self.lb.iter().enumerate() {
            for (layer, v) in layers.iter().enumerate() {
                for index in 0..v.len() {
                    out.push(NeuronId { net, layer, index });
                }
            }
        }
        out
    }

    pub fn free_count(&self) -> usize {
        self.ids().into_iter().filter(|&id| self.status(id) == NeuronStatus::Free).count()
    }

    pub fn matches(&self, model: &EnsembleModel) -> bool {
        self.lb.len() == model.networks.len()
            && self.ub.len() == model.networks.len()
            && model.networks.iter().enumerate().all(|(i, n)| {
                let w = n.hidden_widths();
                self.lb[i].iter().map(Vec::len).eq(w.iter().copied())
                    && self.ub[i].iter().map(Vec::len).eq(w.iter().copied())
            })
    }

    /// Elementwise intersection. Empty intersections collapse to the nearest point of `self`.
    pub fn intersect(&self, other: &NeuronBounds) -> NeuronBounds {
        let mut out = self.clone();
        for id in self.ids() {
            let (a, b) = self.get(id);
            let (c, d) = other.get(id);
            let lo = a.max(c);
            let hi = b.min(d);
            if lo <= hi {
                out.set(id, lo, hi);
            } else {
                out.set(id, lo.min(b), lo.min(b));
            }
        }
        out
    }

    /// Whether every interval of `self` lies inside the matching interval of `other` (up to `tol`).
    pub fn is_subset_of(&self, other: &NeuronBounds, tol: f64) -> bool {
        self.ids().into_iter().all(|id| {
            let (a, b) = self.get(id);
            let (c, d) = other.get(id);
            a >= c - tol && b <= d + tol
        })
    }

    /// Whether `h` (pre-activations from [`crate::model::Network::trace`]) lies inside the bounds of network `net`.
    pub fn contains_trace(&self, net: usize, hidden: &[Vec<f64>], tol: f64) -> bool {
        hidden.iter().enumerate().all(|(l, h)| {
            h.iter().enumerate().all(|(j, v)| *v >= self.lb[net][l][j] - tol && *v <= self.ub[net][l][j] + tol)
        })
    }

    /// Writes the `i,l,j,LB,UB,status,method` report.
    pub fn write_csv(&self, path: impl AsRef<Path>, method: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["i", "l", "j", "LB", "UB", "status", "method"])?;
        for id in self.ids() {
            let (lb, ub) = self.get(id);
            w.write_record([
                id.net.to_string(),
                id.layer.to_string(),
                id.index.to_string(),
                format!("{lb:.17e}"),
                format!("{ub:.17e}"),
                self.status(id).as_str().to_string(),
                method.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Columns owned by one modeled (not always-inactive) hidden neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronVars {
    pub id: NeuronId,
    pub h: usize,
    pub y: usize,
    pub z: Option<usize>,
    pub lb: f64,
    pub ub: f64,
    pub status: NeuronStatus,
    /// Row defining `h`.
    pub def_row: usize,
}

/// Row ranges of every constraint family, in the order they were emitted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowIndex {
    /// Output definitions `o - W y = b`.
    pub output: Vec<usize>,
    /// Hidden definitions `h - W y = b`.
    pub definition: Vec<usize>,
    /// `y - h >= 0`.
    pub lower: Vec<usize>,
    /// `y - h - LB z <= -LB`.
    pub upper_lb: Vec<usize>,
    /// `y - UB z <= 0`.
    pub upper_ub: Vec<usize>,
    /// `y - h = 0` for always-active neurons.
    pub pass_through: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MilpModel {
    /// Continuous relaxation (binaries relaxed to `[0,1]`), always a maximization.
    pub lp: LpProblem,
    pub binary_cols: Vec<usize>,
    pub x_cols: Vec<usize>,
    pub neurons: Vec<NeuronVars>,
    /// `(network, output column)` for every included network.
    pub outputs: Vec<(usize, usize)>,
    pub rows: RowIndex,
    /// Target `h` columns of a bound subproblem (empty otherwise).
    pub targets: Vec<(NeuronId, usize)>,
    lookup: Vec<Vec<Vec<Option<usize>>>>,
}

impl MilpModel {
    pub fn n_cols(&self) -> usize {
        self.lp.n_cols
    }

    pub fn neuron(&self, id: NeuronId) -> Option<&NeuronVars> {
        self.lookup.get(id.net)?.get(id.layer)?.get(id.index)?.map(|k| &self.neurons[k])
    }

    pub fn x_of(&self, v: &[f64]) -> Vec<f64> {
        self.x_cols.iter().map(|&c| v[c]).collect()
    }

    pub fn z_of(&self, v: &[f64]) -> Vec<f64> {
        self.binary_cols.iter().map(|&c| v[c]).collect()
    }

    /// Fixes every binary column to the matching entry of `z`.
    pub fn fix_binaries(&mut self, z: &[f64]) {
        for (&c, &v) in self.binary_cols.iter().zip(z) {
            self.lp.col_lo[c] = v;
            self.lp.col_hi[c] = v;
        }
    }

    pub fn set_box(&mut self, domain: &InputBox) {
        for (k, &c) in self.x_cols.iter().enumerate() {
            self.lp.col_lo[c] = domain.lo[k];
            self.lp.col_hi[c] = domain.hi[k];
        }
    }

    /// Largest distance of a binary column from the nearest integer.
    pub fn integrality_violation(&self, v: &[f64]) -> f64 {
        self.binary_cols.iter().map(|&c| (v[c] - v[c].round()).abs()).fold(0.0, f64::max)
    }

    /// The integer point obtained by forward evaluation at `x`: every column
    /// takes its exact value and each `z` records the activation pattern.
    /// Returns `None` if some pre-activation falls outside the model bounds.
    pub fn point_from_input(&self, model: &EnsembleModel, x: &[f64]) -> Option<Vec<f64>> {
        let mut v = vec![0.0; self.n_cols()];
        for (k, &c) in self.x_cols.iter().enumerate() {
            v[c] = x[k];
        }
        for &(net, out_col) in &self.outputs {
            let (hidden, out) = model.networks[net].trace(x);
            v[out_col] = out;
            for (l, h) in hidden.iter().enumerate() {
                for (j, &hv) in h.iter().enumerate() {
                    if let Some(nv) = self.neuron(NeuronId { net, layer: l, index: j }) {
                        v[nv.h] = hv;
                        v[nv.y] = hv.max(0.0);
                        if let Some(z) = nv.z {
                            v[z] = if hv > 0.0 { 1.0 } else { 0.0 };
                        }
                    }
                }
            }
        }
        let slack = 1e-7;
        if self.lp.max_violation(&v) > slack * (1.0 + v.iter().fold(0.0f64, |a, b| a.max(b.abs()))) {
            return None;
        }
        Some(v)
    }

    /// Human-readable dump of the model with its binary columns listed.
    pub fn to_lp_text(&self) -> String {
        let mut text = self.lp.to_lp_text();
        let end = text.rfind("end").unwrap_or(text.len());
        let mut bin = String::from("binary\n");
        for c in &self.binary_cols {
            let _ = writeln!(bin, "  c{c}");
        }
        text.insert_str(end, &bin);
        text
    }

    pub fn write_lp_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = File::create(path)?;
        f.write_all(self.to_lp_text().as_bytes())?;
        Ok(())
    }
}

/// Which network layers a builder emits.
#[derive(Clone, Copy)]
enum Extent {
    /// All hidden layers plus the output neuron.
    Full,
    /// Hidden layers before `layer`, plus the bare definition rows of `layer`.
    UpTo { layer: usize },
}

struct Builder<'a> {
    model: &'a EnsembleModel,
    bounds: &'a NeuronBounds,
    relaxed: bool,
    m: MilpModel,
}

impl<'a> Builder<'a> {
    fn new(model: &'a EnsembleModel, bounds: &'a NeuronBounds, domain: &InputBox, relaxed: bool) -> Result<Self> {
        if model.sense != ObjectiveSense::Max {
            return Err(Error::Precondition("formulation expects a maximization model (see to_max_form)".into()));
        }
        if !bounds.matches(model) {
            return Err(Error::Build("neuron bounds do not match the model architecture".into()));
        }
        if domain.dim() != model.input_dim {
            return Err(Error::Shape { expected: model.input_dim, got: domain.dim() });
        }
        let n = model.input_dim;
        let mut lp = LpProblem::new(0, Sense::Maximize);
        let x_cols = (0..n).map(|k| lp.add_col(domain.lo[k], domain.hi[k], 0.0)).collect();
        let lookup =
            model.networks.iter().map(|net| net.hidden_widths().iter().map(|&w| vec![None; w]).collect()).collect();
        Ok(Self {
            model,
            bounds,
            relaxed,
            m: MilpModel {
                lp,
                binary_cols: Vec::new(),
                x_cols,
                neurons: Vec::new(),
                outputs: Vec::new(),
                rows: RowIndex::default(),
                targets: Vec::new(),
                lookup,
            },
        })
    }

    fn add_network(&mut self, i: usize, extent: Extent, out_coef: f64) -> Result<()> {
        let net = &self.model.networks[i];
        // Active columns of the previous layer with their activation bounds.
        let mut prev: Vec<Option<(usize, f64, f64)>> =
            self.m.x_cols.iter().map(|&c| Some((c, self.m.lp.col_lo[c], self.m.lp.col_hi[c]))).collect();
        let n_hidden = net.hidden_layers();
        let last = match extent {
            Extent::Full => n_hidden,
            Extent::UpTo { layer } => layer.min(n_hidden),
        };
        for l in 0..last {
            let layer = &net.layers[l];
            let mut next = Vec::with_capacity(layer.width());
            for j in 0..layer.width() {
                let id = NeuronId { net: i, layer: l, index: j };
                let (lb, ub) = self.bounds.get(id);
                if !(lb.is_finite() && ub.is_finite()) || lb > ub {
                    return Err(Error::Build(format!("neuron ({i},{l},{j}) has invalid bounds [{lb}, {ub}]")));
                }
                let status = NeuronStatus::from_bounds(lb, ub);
                if status == NeuronStatus::AlwaysInactive {
                    next.push(None);
                    continue;
                }
                let lp = &mut self.m.lp;
                let h = lp.add_col(lb, ub, 0.0);
                let y = lp.add_col(lb.max(0.0), ub, 0.0);
                let mut coeffs = vec![(h, 1.0)];
                push_affine(&mut coeffs, &layer.w[j], &prev);
                let def_row = lp.add_row(coeffs, Relation::Eq, layer.b[j]);
                self.m.rows.definition.push(def_row);
                let mut z = None;
                if status == NeuronStatus::Free {
                    let zc = lp.add_col(0.0, 1.0, 0.0);
                    let r1 = lp.add_row(vec![(y, 1.0), (h, -1.0)], Relation::Ge, 0.0);
                    let r2 = lp.add_row(vec![(y, 1.0), (h, -1.0), (zc, -lb)], Relation::Le, -lb);
                    let r3 = lp.add_row(vec![(y, 1.0), (zc, -ub)], Relation::Le, 0.0);
                    self.m.rows.lower.push(r1);
                    self.m.rows.upper_lb.push(r2);
                    self.m.rows.upper_ub.push(r3);
                    if !self.relaxed {
                        self.m.binary_cols.push(zc);
                    }
                    z = Some(zc);
                } else {
                    let r = lp.add_row(vec![(y, 1.0), (h, -1.0)], Relation::Eq, 0.0);
                    self.m.rows.pass_through.push(r);
                }
                self.m.lookup[i][l][j] = Some(self.m.neurons.len());
                self.m.neurons.push(NeuronVars { id, h, y, z, lb, ub, status, def_row });
                next.push(Some((y, lb.max(0.0), ub)));
            }
            prev = next;
        }
        match extent {
            Extent::Full => {
                let out = net.output_layer();
                let (lo, hi) = affine_range(&out.w[0], out.b[0], &prev);
                let o = self.m.lp.add_col(lo, hi, out_coef);
                let mut coeffs = vec![(o, 1.0)];
                push_affine(&mut coeffs, &out.w[0], &prev);
                let r = self.m.lp.add_row(coeffs, Relation::Eq, out.b[0]);
                self.m.rows.output.push(r);
                self.m.outputs.push((i, o));
            }
            Extent::UpTo { layer } => {
                let target = &net.layers[layer];
                for j in 0..target.width() {
                    let h = self.m.lp.add_col(f64::NEG_INFINITY, f64::INFINITY, 0.0);
                    let mut coeffs = vec![(h, 1.0)];
                    push_affine(&mut coeffs, &target.w[j], &prev);
                    let r = self.m.lp.add_row(coeffs, Relation::Eq, target.b[j]);
                    self.m.rows.definition.push(r);
                    self.m.targets.push((NeuronId { net: i, layer, index: j }, h));
                }
            }
        }
        Ok(())
    }
}

fn push_affine(coeffs: &mut Vec<(usize, f64)>, w: &[f64], prev: &[Option<(usize, f64, f64)>]) {
    for (k, p) in prev.iter().enumerate() {
        if let Some((c, _, _)) = p {
            if w[k] != 0.0 {
                coeffs.push((*c, -w[k]));
            }
        }
    }
}

fn affine_range(w: &[f64], b: f64, prev: &[Option<(usize, f64, f64)>]) -> (f64, f64) {
    let (mut lo, mut hi) = (b, b);
    for (k, p) in prev.iter().enumerate() {
        if let Some((_, a, c)) = p {
            if w[k] >= 0.0 {
                lo += w[k] * a;
                hi += w[k] * c;
            } else {
                lo += w[k] * c;
                hi += w[k] * a;
            }
        }
    }
    // Widen slightly so rounding in the sums never cuts off a true output.
    let pad = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    (lo - pad, hi + pad)
}

/// Formulation of the whole ensemble: maximize the average output over `domain`.
pub fn build_bigm(model: &EnsembleModel, bounds: &NeuronBounds, domain: &InputBox) -> Result<MilpModel> {
    let mut b = Builder::new(model, bounds, domain, false)?;
    let coef = 1.0 / model.ensemble_size() as f64;
    for i in 0..model.ensemble_size() {
        b.add_network(i, Extent::Full, coef)?;
    }
    Ok(b.m)
}

/// Formulation of network `net` alone with objective `(1/e) o + extra . x`.
pub fn build_single_network_bigm(
    model: &EnsembleModel,
    net: usize,
    bounds: &NeuronBounds,
    domain: &InputBox,
    extra: &[f64],
) -> Result<MilpModel> {
    if net >= model.ensemble_size() {
        return Err(Error::Build(format!("network index {net} out of range")));
    }
    if extra.len() != model.input_dim {
        return Err(Error::Shape { expected: model.input_dim, got: extra.len() });
    }
    let mut b = Builder::new(model, bounds, domain, false)?;
    b.add_network(net, Extent::Full, 1.0 / model.ensemble_size() as f64)?;
    let mut m = b.m;
    for (k, &c) in m.x_cols.iter().enumerate() {
        m.lp.objective[c] = extra[k];
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

/// Layers `0..layer` of network `net` plus one unbounded `h` column per
/// neuron of `layer`, each tied to its definition row. The objective is left
/// at zero; see [`set_target_objective`].
pub fn build_layer_subproblem(
    model: &EnsembleModel,
    net: usize,
    layer: usize,
    relaxed: bool,
    bounds: &NeuronBounds,
    domain: &InputBox,
) -> Result<MilpModel> {
    if net >= model.ensemble_size() || layer >= model.networks[net].hidden_layers() {
        return Err(Error::Build(format!("no hidden layer {layer} in network {net}")));
    }
    let mut b = Builder::new(model, bounds, domain, relaxed)?;
    b.add_network(net, Extent::UpTo { layer }, 0.0)?;
    Ok(b.m)
}

/// Sets the objective of a layer subproblem to `+h` (max) or `-h` (min) of target `k`.
pub fn set_target_objective(m: &mut MilpModel, k: usize, direction: Direction) {
    for v in m.lp.objective.iter_mut() {
        *v = 0.0;
    }
    let col = m.targets[k].1;
    m.lp.objective[col] = match direction {
        Direction::Max => 1.0,
        Direction::Min => -1.0,
    };
}

/// Subproblem whose maximum is `+h` (max) or `-h` (min) of the given neuron.
pub fn build_bound_subproblem(
    model: &EnsembleModel,
    id: NeuronId,
    direction: Direction,
    relaxed: bool,
    bounds: &NeuronBounds,
    domain: &InputBox,
) -> Result<MilpModel> {
    let mut m = build_layer_subproblem(model, id.net, id.layer, relaxed, bounds, domain)?;
    let k = m
        .targets
        .iter()
        .position(|(t, _)| t.index == id.index)
        .ok_or_else(|| Error::Build(format!("neuron index {} out of range", id.index)))?;
    set_target_objective(&mut m, k, direction);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{layer, random_network};
    use crate::model::{forward_ensemble, Network, Scaler};
    use ennopt_lp::solve_lp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_neuron(lo: f64, hi: f64) -> EnsembleModel {
        let net = Network { layers: vec![layer(vec![vec![1.0]], vec![0.0]), layer(vec![vec![1.0]], vec![0.0])] };
        EnsembleModel::new(
            vec![net],
            InputBox::new(vec![lo], vec![hi]).unwrap(),
            Scaler::identity(1),
            ObjectiveSense::Max,
        )
        .unwrap()
    }

    #[test]
    fn loose_bounds_admit_the_fractional_point() {
        let model = one_neuron(-20.0, 10.0);
        let mut bounds = NeuronBounds::filled(&model, 0.0, 0.0);
        bounds.set(NeuronId { net: 0, layer: 0, index: 0 }, -20.0, 10.0);
        let m = build_bigm(&model, &bounds, &model.domain).unwrap();
        let nv = &m.neurons[0];
        let mut v = vec![0.0; m.n_cols()];
        v[m.x_cols[0]] = -5.0;
        v[nv.h] = -5.0;
        v[nv.y] = 5.0;
        v[nv.z.unwrap()] = 0.5;
        v[m.outputs[0].1] = 5.0;
        assert!(m.lp.max_violation(&v) < 1e-12);
        assert_eq!(m.binary_cols.len(), 1);
    }

    #[test]
    fn tight_lower_bound_forces_zero_output() {
        let model = one_neuron(-5.0, 10.0);
        let mut bounds = NeuronBounds::filled(&model, 0.0, 0.0);
        bounds.set(NeuronId { net: 0, layer: 0, index: 0 }, -5.0, 10.0);
        let mut m = build_bigm(&model, &bounds, &model.domain).unwrap();
        m.lp.col_hi[m.x_cols[0]] = -5.0;
        let (y, z) = (m.neurons[0].y, m.neurons[0].z.unwrap());
        for col in [y, z] {
            m.lp.objective.iter_mut().for_each(|c| *c = 0.0);
            m.lp.objective[col] = 1.0;
            let s = solve_lp(&m.lp).unwrap();
            assert!(s.is_optimal());
            assert!(s.objective.abs() < 1e-9, "column {col} reaches {}", s.objective);
        }
    }

    fn tiny_pair() -> (EnsembleModel, NeuronBounds) {
        let n0 = Network {
            layers: vec![
                layer(vec![vec![1.0, -1.0], vec![-1.0, 0.5], vec![0.3, 0.2]], vec![0.1, 0.2, -2.0]),
                layer(vec![vec![1.0, 2.0, 5.0]], vec![0.0]),
            ],
        };
        let n1 = Network {
            layers: vec![
                layer(vec![vec![-1.0, 1.0], vec![0.5, 0.5]], vec![0.2, -0.3]),
                layer(vec![vec![1.5, -1.0]], vec![0.1]),
            ],
        };
        let model =
            EnsembleModel::new(vec![n0, n1], InputBox::unit(2), Scaler::identity(2), ObjectiveSense::Max).unwrap();
        let bounds = crate::tighten::interval_bounds(&model, &model.domain);
        (model, bounds)
    }

    #[test]
    fn fixing_an_inactive_neuron_keeps_the_optimum() {
        let (model, bounds) = tiny_pair();
        // Neuron (0,0,2) has h = 0.3x1 + 0.2x2 - 2 < 0 on the unit box.
        assert_eq!(bounds.status(NeuronId { net: 0, layer: 0, index: 2 }), NeuronStatus::AlwaysInactive);
        let mut loose = bounds.clone();
        loose.set(NeuronId { net: 0, layer: 0, index: 2 }, -2.0, 1.0);
        let fixed = build_bigm(&model, &bounds, &model.domain).unwrap();
        let unfixed = build_bigm(&model, &loose, &model.domain).unwrap();
        assert_eq!(unfixed.binary_cols.len(), fixed.binary_cols.len() + 1);
        let a =
            crate::bnb::solve_milp(&fixed, &crate::bnb::BnbParams::default(), &mut crate::bnb::NoCallbacks).0.unwrap();
        let b = crate::bnb::solve_milp(&unfixed, &crate::bnb::BnbParams::default(), &mut crate::bnb::NoCallbacks)
            .0
            .unwrap();
        assert!((a.objective - b.objective).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let fx = forward_ensemble(&model, &x).unwrap();
            let p = fixed.point_from_input(&model, &x).unwrap();
            let obj = fixed.lp.objective_value(&p);
            assert!((obj - fx).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_points_are_feasible_with_matching_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let nets: Vec<Network> = (0..2).map(|_| random_network(&mut rng, 3, &[4, 3])).collect();
            let model = EnsembleModel::new(nets, InputBox::unit(3), Scaler::identity(3), ObjectiveSense::Max).unwrap();
            let bounds = crate::tighten::interval_bounds(&model, &model.domain);
            let m = build_bigm(&model, &bounds, &model.domain).unwrap();
            for _ in 0..50 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
                let p = m.point_from_input(&model, &x).expect("forward point feasible");
                assert_eq!(m.integrality_violation(&p), 0.0);
                for nv in &m.neurons {
                    assert!((p[nv.y] - p[nv.h].max(0.0)).abs() < 1e-12);
                }
                assert!((m.lp.objective_value(&p) - forward_ensemble(&model, &x).unwrap()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_extra_term_matches_ensemble_of_one() {
        let (model, bounds) = tiny_pair();
        let single = EnsembleModel::new(
            vec![model.networks[1].clone()],
            InputBox::unit(2),
            Scaler::identity(2),
            ObjectiveSense::Max,
        )
        .unwrap();
        let sb = NeuronBounds { lb: vec![bounds.lb[1].clone()], ub: vec![bounds.ub[1].clone()] };
        let a = build_single_network_bigm(&model, 1, &bounds, &model.domain, &[0.0, 0.0]).unwrap();
        let b = build_bigm(&single, &sb, &single.domain).unwrap();
        let p = crate::bnb::BnbParams::default();
        let va = crate::bnb::solve_milp(&a, &p, &mut crate::bnb::NoCallbacks).0.unwrap().objective;
        let vb = crate::bnb::solve_milp(&b, &p, &mut crate::bnb::NoCallbacks).0.unwrap().objective;
        // Objective of `a` carries the ensemble weight 1/2.
        assert!((2.0 * va - vb).abs() < 1e-9);
    }

    #[test]
    fn pure_linear_term_pushes_to_the_upper_face() {
        let zero = Network { layers: vec![layer(vec![vec![0.0, 0.0]], vec![0.0]), layer(vec![vec![0.0]], vec![0.0])] };
        let model =
            EnsembleModel::new(vec![zero], InputBox::unit(2), Scaler::identity(2), ObjectiveSense::Max).unwrap();
        let bounds = crate::tighten::interval_bounds(&model, &model.domain);
        let m = build_single_network_bigm(&model, 0, &bounds, &model.domain, &[0.0, 0.7]).unwrap();
        let inc =
            crate::bnb::solve_milp(&m, &crate::bnb::BnbParams::default(), &mut crate::bnb::NoCallbacks).0.unwrap();
        assert!((inc.values[m.x_cols[1]] - 1.0).abs() < 1e-12);
        assert!((inc.objective - 0.7).abs() < 1e-12);
    }

    #[test]
    fn first_layer_subproblem_reproduces_interval_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let nets = vec![random_network(&mut rng, 3, &[5, 4])];
        let model = EnsembleModel::new(nets, InputBox::unit(3), Scaler::identity(3), ObjectiveSense::Max).unwrap();
        let ib = crate::tighten::interval_bounds(&model, &model.domain);
        for j in 0..5 {
            let id = NeuronId { net: 0, layer: 0, index: j };
            let hi =
                solve_lp(&build_bound_subproblem(&model, id, Direction::Max, true, &ib, &model.domain).unwrap().lp)
                    .unwrap();
            let lo =
                solve_lp(&build_bound_subproblem(&model, id, Direction::Min, true, &ib, &model.domain).unwrap().lp)
                    .unwrap();
            let (lb, ub) = ib.get(id);
            assert!((hi.objective - ub).abs() < 1e-9);
            assert!((-lo.objective - lb).abs() < 1e-9);
            assert!(-lo.objective <= hi.objective);
        }
        // Relaxation dominance one layer deeper.
        for j in 0..4 {
            let id = NeuronId { net: 0, layer: 1, index: j };
            let relaxed =
                solve_lp(&build_bound_subproblem(&model, id, Direction::Max, true, &ib, &model.domain).unwrap().lp)
                    .unwrap();
            let exact = build_bound_subproblem(&model, id, Direction::Max, false, &ib, &model.domain).unwrap();
            let inc = crate::bnb::solve_milp(&exact, &crate::bnb::BnbParams::default(), &mut crate::bnb::NoCallbacks)
                .0
                .unwrap();
            assert!(relaxed.objective >= inc.objective - 1e-9);
        }
    }

    #[test]
    fn lp_text_lists_binaries() {
        let (model, bounds) = tiny_pair();
        let m = build_bigm(&model, &bounds, &model.domain).unwrap();
        let text = m.to_lp_text();
        assert!(text.starts_with("maximize"));
        assert!(text.contains("binary\n"));
        assert!(text.trim_end().ends_with("end"));
    }

    #[test]
    fn minimization_models_are_rejected() {
        let mut model = one_neuron(0.0, 1.0);
        model.sense = ObjectiveSense::Min;
        let bounds = NeuronBounds::filled(&model, -1.0, 1.0);
        assert!(matches!(build_bigm(&model, &bounds, &model.domain), Err(Error::Precondition(_))));
    }
}
