//! Benchmark functions, dataset generation, bagged ensemble training and
//! the Mahalanobis distance used to judge how far a solution sits from data.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::{EnsembleModel, InputBox, LayerWeights, Network, ObjectiveSense, Scaler};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkId {
    Peaks,
    Beale,
    Perm3,
    Spring5,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkFn {
    pub id: BenchmarkId,
    pub domain: InputBox,
    pub known_opt_value: f64,
    pub known_opt_point: Vec<f64>,
}

impl BenchmarkFn {
    pub fn new(id: BenchmarkId) -> Self {
        let (lo, hi, value, point) = match id {
            BenchmarkId::Peaks => (-3.0, 3.0, -6.551, vec![0.228, -1.626]),
            BenchmarkId::Beale => (-4.5, 4.5, 0.0, vec![3.0, 0.5]),
            BenchmarkId::Perm3 => (-3.0, 4.0, 0.0, vec![1.0, 2.0, 3.0]),
            BenchmarkId::Spring5 => (0.0, 8.0, -1.0, vec![4.0; 5]),
        };
        let n = point.len();
        Self {
            id,
            domain: InputBox { lo: vec![lo; n], hi: vec![hi; n] },
            known_opt_value: value,
            known_opt_point: point,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        let id = match name.to_ascii_lowercase().as_str() {
            "peaks" => BenchmarkId::Peaks,
            "beale" => BenchmarkId::Beale,
            "perm" | "perm3" => BenchmarkId::Perm3,
            "spring" | "spring5" => BenchmarkId::Spring5,
            other => return Err(Error::Parameter(format!("unknown benchmark function '{other}'"))),
        };
        Ok(Self::new(id))
    }

    pub fn name(&self) -> &'static str {
        match self.id {
            BenchmarkId::Peaks => "peaks",
            BenchmarkId::Beale => "beale",
            BenchmarkId::Perm3 => "perm3",
            BenchmarkId::Spring5 => "spring5",
        }
    }

    pub fn dim(&self) -> usize {
        self.known_opt_point.len()
    }

    /// Recommended dataset size for this function.
    pub fn default_samples(&self) -> usize {
        match self.id {
            BenchmarkId::Peaks | BenchmarkId::Beale => 2000,
            BenchmarkId::Perm3 => 3000,
            BenchmarkId::Spring5 => 5000,
        }
    }

    /// Evaluates the function; `x` must lie in the domain.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.domain.check(x)?;
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self.id {
            BenchmarkId::Peaks => {
                let (a, b) = (x[0], x[1]);
                3.0 * (1.0 - a).powi(2) * (-a * a - (b + 1.0).powi(2)).exp()
                    - 10.0 * (a / 5.0 - a.powi(3) - b.powi(5)) * (-a * a - b * b).exp()
                    - (-(a + 1.0).powi(2) - b * b).exp() / 3.0
            }
            BenchmarkId::Beale => {
                let (a, b) = (x[0], x[1]);
                (1.5 - a + a * b).powi(2) + (2.25 - a + a * b * b).powi(2) + (2.625 - a + a * b.powi(3)).powi(2)
            }
            BenchmarkId::Perm3 => (1..=3)
                .map(|k| {
                    let inner: f64 = (1..=3)
                        .map(|j| {
                            let jf = j as f64;
                            (jf.powi(k) + 0.5) * ((x[j - 1] / jf).powi(k) - 1.0)
                        })
                        .sum();
                    inner * inner
                })
                .sum(),
            BenchmarkId::Spring5 => {
                let r2: f64 = x.iter().map(|v| (v - 4.0).powi(2)).sum();
                0.1 * r2 - (4.0 * r2.sqrt()).cos()
            }
        }
    }
}

pub fn eval_benchmark(f: &BenchmarkFn, x: &[f64]) -> Result<f64> {
    f.eval(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Lhs,
    Mvn,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dataset(format!("{} input rows but {} targets", x.len(), y.len())));
        }
        if let Some(first) = x.first() {
            let n = first.len();
            if n == 0 {
                return Err(Error::Dataset("rows have no input columns".into()));
            }
            if let Some(i) = x.iter().position(|r| r.len() != n) {
                return Err(Error::Dataset(format!("row {i} has {} inputs, expected {n}", x[i].len())));
            }
        }
        Ok(Self { x, y, provenance })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |r| r.len())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for (row, y) in self.x.iter().zip(&self.y) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            rec.push(format!("{y:e}"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a headed CSV; the last column is the target.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
        let width = r.headers()?.len();
        if width < 2 {
            return Err(Error::Dataset("need at least one input column and a target column".into()));
        }
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::Dataset(format!("line {}: '{s}' is not a number", i + 2))))
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != width {
                return Err(Error::Dataset(format!("line {}: {} fields, expected {width}", i + 2, vals.len())));
            }
            ys.push(vals[width - 1]);
            xs.push(vals[..width - 1].to_vec());
        }
        Dataset::new(xs, ys, Provenance::Csv)
    }
}

fn label(f: &BenchmarkFn, x: Vec<Vec<f64>>, provenance: Provenance) -> Dataset {
    let y = x.iter().map(|r| f.eval_unchecked(r)).collect();
    Dataset { x, y, provenance }
}

/// Latin hypercube sample: every coordinate hits each of `n` equal strata once.
pub fn sample_lhs(f: &BenchmarkFn, n_samples: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = f.dim();
    let mut x = vec![vec![0.0; dim]; n_samples];
    let mut strata: Vec<usize> = (0..n_samples).collect();
    for j in 0..dim {
        strata.shuffle(&mut rng);
        let (lo, w) = (f.domain.lo[j], f.domain.hi[j] - f.domain.lo[j]);
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.random();
            x[i][j] = (lo + w * (s as f64 + u) / n_samples as f64).min(f.domain.hi[j]);
        }
    }
    label(f, x, Provenance::Lhs)
}

const MVN_MAX_REJECTIONS: usize = 1000;

/// Covariance used by [`sample_mvn`] for a given seed.
pub fn mvn_covariance(f: &BenchmarkFn, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mvn_covariance_from(f, &mut rng)
}

fn mvn_covariance_from(f: &BenchmarkFn, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = f.dim();
    let g: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    let widths = f.domain.widths();
    let scale = (widths.iter().sum::<f64>() / n as f64 / 6.0).powi(2);
    let d: DVector<f64> = DVector::from_fn(n, |_, _| rng.random_range(0.5..=2.0) * scale);
    let sigma: DMatrix<f64> = q.transpose() * DMatrix::<f64>::from_diagonal(&d) * q;
    (&sigma + sigma.transpose()) * 0.5
}

/// Normal draws around the known optimum, rejected outside the domain and
/// clamped after too many rejections.
pub fn sample_mvn(f: &BenchmarkFn, n_samples: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = mvn_covariance_from(f, &mut rng);
    let l = sigma.cholesky().expect("covariance is positive definite by construction").l();
    let mu = DVector::from_column_slice(&f.known_opt_point);
    let n = f.dim();
    let mut x = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut draw = Vec::new();
        for attempt in 0..MVN_MAX_REJECTIONS {
            let z: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let v = &mu + &l * z;
            draw = v.iter().copied().collect();
            if f.domain.contains(&draw, 0.0) {
                break;
            }
            if attempt + 1 == MVN_MAX_REJECTIONS {
                draw = f.domain.clamp(&draw);
            }
        }
        x.push(draw);
    }
    label(f, x, Provenance::Mvn)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub e: usize,
    pub layers: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Objective sense stored in the trained model.
    pub sense: ObjectiveSense,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            e: 1,
            layers: vec![20],
            learning_rate: 0.005,
            batch_size: 32,
            max_epochs: 2000,
            patience: 100,
            seed: 0,
            sense: ObjectiveSense::Min,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if self.e == 0 {
            return bad("ensemble size must be positive");
        }
        if self.layers.is_empty() || self.layers.contains(&0) {
            return bad("hidden layer widths must be positive and non-empty");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch size, epochs and patience must be positive");
        }
        if self.patience >= self.max_epochs {
            return bad("patience must be smaller than max_epochs");
        }
        Ok(())
    }
}

/// Dense MLP with flat parameter storage, used only while training.
#[derive(Clone)]
struct Mlp {
    sizes: Vec<usize>,
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Mlp {
    fn init(sizes: Vec<usize>, rng: &mut ChaCha8Rng) -> Self {
        let mut w = Vec::new();
        let mut b = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let s = (2.0 / fan_in as f64).sqrt();
            w.push(
                (0..fan_in * fan_out)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        z * s
                    })
                    .collect::<Vec<f64>>(),
            );
            b.push(vec![0.0; fan_out]);
        }
        Self { sizes, w, b }
    }

    fn n_layers(&self) -> usize {
        self.w.len()
    }

    /// Returns post-activation values per layer, input first.
    fn forward(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.clear();
        acts.push(x.to_vec());
        for l in 0..self.n_layers() {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &acts[l];
            let mut out = self.b[l].clone();
            for (o, v) in out.iter_mut().enumerate() {
                let row = &self.w[l][o * fi..(o + 1) * fi];
                *v += row.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < self.n_layers() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            debug_assert_eq!(out.len(), fo);
            acts.push(out);
        }
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let mut acts = Vec::new();
        self.forward(x, &mut acts);
        acts.last().unwrap()[0]
    }

    fn mse(&self, xs: &[Vec<f64>], ys: &[f64], idx: &[usize]) -> f64 {
        idx.iter().map(|&i| (self.predict(&xs[i]) - ys[i]).powi(2)).sum::<f64>() / idx.len().max(1) as f64
    }

    fn zeros_like(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (self.w.iter().map(|v| vec![0.0; v.len()]).collect(), self.b.iter().map(|v| vec![0.0; v.len()]).collect())
    }

    fn batch_step(&mut self, xs: &[Vec<f64>], ys: &[f64], batch: &[usize], opt: &mut Adam, lr: f64) {
        let (mut gw, mut gb) = self.zeros_like();
        let mut acts = Vec::new();
        let scale = 2.0 / batch.len() as f64;
        for &i in batch {
            self.forward(&xs[i], &mut acts);
            let mut delta = vec![(acts.last().unwrap()[0] - ys[i]) * scale];
            for l in (0..self.n_layers()).rev() {
                let fi = self.sizes[l];
                let prev = &acts[l];
                for (o, d) in delta.iter().enumerate() {
                    gb[l][o] += d;
                    let g = &mut gw[l][o * fi..(o + 1) * fi];
                    for (gk, p) in g.iter_mut().zip(prev) {
                        *gk += d * p;
                    }
                }
                if l > 0 {
                    let mut next = vec![0.0; fi];
                    for (o, d) in delta.iter().enumerate() {
                        for (k, nk) in next.iter_mut().enumerate() {
                            *nk += d * self.w[l][o * fi + k];
                        }
                    }
                    for (k, nk) in next.iter_mut().enumerate() {
                        if prev[k] <= 0.0 {
                            *nk = 0.0;
                        }
                    }
                    delta = next;
                }
            }
        }
        opt.t += 1;
        let c1 = 1.0 - BETA1.powi(opt.t);
        let c2 = 1.0 - BETA2.powi(opt.t);
        let nl = self.n_layers();
        for l in 0..nl {
            for (p, g, k) in self.w[l].iter_mut().zip(&gw[l]).zip(0..).map(|((p, g), k)| (p, g, k)) {
                adam_update(p, *g, &mut opt.m[l][k], &mut opt.v[l][k], lr, c1, c2);
            }
            for (p, g, k) in self.b[l].iter_mut().zip(&gb[l]).zip(0..).map(|((p, g), k)| (p, g, k)) {
                adam_update(p, *g, &mut opt.m[nl + l][k], &mut opt.v[nl + l][k], lr, c1, c2);
            }
        }
    }

    fn to_network(&self) -> Network {
        let layers = (0..self.n_layers())
            .map(|l| {
                let fi = self.sizes[l];
                LayerWeights { w: self.w[l].chunks(fi).map(|r| r.to_vec()).collect(), b: self.b[l].clone() }
            })
            .collect();
        Network { layers }
    }
}

fn adam_update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, c1: f64, c2: f64) {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
}

fn fit_scaler(data: &Dataset) -> Result<Scaler> {
    let dim = data.dim();
    let mut input_min = vec![f64::INFINITY; dim];
    let mut input_max = vec![f64::NEG_INFINITY; dim];
    for row in &data.x {
        for j in 0..dim {
            input_min[j] = input_min[j].min(row[j]);
            input_max[j] = input_max[j].max(row[j]);
        }
    }
    for j in 0..dim {
        if !(input_max[j] > input_min[j]) {
            return Err(Error::DegenerateFeature { feature: j, value: input_min[j] });
        }
    }
    let output_min = data.y.iter().copied().fold(f64::INFINITY, f64::min);
    let output_max = data.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(output_max > output_min) {
        return Err(Error::DegenerateFeature { feature: dim, value: output_min });
    }
    Ok(Scaler { input_min, input_max, output_min, output_max })
}

fn train_network(xs: &[Vec<f64>], ys: &[f64], cfg: &TrainConfig, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = if xs.len() >= 5 { xs.len() / 5 } else { 0 };
    let (holdout, rest) = order.split_at(n_hold);
    let mut train: Vec<usize> = (0..rest.len()).map(|_| rest[rng.random_range(0..rest.len())]).collect();
    let holdout: Vec<usize> = if holdout.is_empty() { rest.to_vec() } else { holdout.to_vec() };

    let mut sizes = vec![xs[0].len()];
    sizes.extend(&cfg.layers);
    sizes.push(1);
    let mut net = Mlp::init(sizes, &mut rng);
    let mut opt = {
        let (mw, mb) = net.zeros_like();
        let m: Vec<Vec<f64>> = mw.into_iter().chain(mb).collect();
        Adam { v: m.clone(), m, t: 0 }
    };
    let mut best = net.clone();
    let mut best_loss = net.mse(xs, ys, &holdout);
    let mut stale = 0;
    for _ in 0..cfg.max_epochs {
        train.shuffle(&mut rng);
        for batch in train.chunks(cfg.batch_size) {
            net.batch_step(xs, ys, batch, &mut opt, cfg.learning_rate);
        }
        let loss = net.mse(xs, ys, &holdout);
        if loss < best_loss {
            best_loss = loss;
            best = net.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    log::debug!("network seed {seed}: best holdout mse {best_loss:.3e}");
    best.to_network()
}

/// Trains `cfg.e` networks on bootstrap resamples of min-max scaled data.
///
/// The returned model lives on the unit box; its scaler maps back to the
/// original units of `data`.
pub fn train_ensemble(data: &Dataset, cfg: &TrainConfig) -> Result<EnsembleModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("dataset is empty".into()));
    }
    let scaler = fit_scaler(data)?;
    let xs: Vec<Vec<f64>> = data.x.iter().map(|r| scaler.scale_input(r)).collect();
    let ys: Vec<f64> = data.y.iter().map(|&y| scaler.scale_output(y)).collect();
    let networks = (0..cfg.e).map(|k| train_network(&xs, &ys, cfg, cfg.seed.wrapping_add(k as u64))).collect();
    EnsembleModel::new(networks, InputBox::unit(data.dim()), scaler, cfg.sense)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mahalanobis {
    pub distance: f64,
    /// True when the sample covariance was singular and a ridge was added.
    pub ridge_applied: bool,
}

pub const MAHALANOBIS_RIDGE: f64 = 1e-8;

pub fn mahalanobis(x: &[f64], data: &Dataset) -> Result<Mahalanobis> {
    let dim = data.dim();
    if x.len() != dim {
        return Err(Error::Shape { expected: dim, got: x.len() });
    }
    let n = data.len();
    if n < dim + 1 {
        return Err(Error::Dataset(format!("need at least {} rows, got {n}", dim + 1)));
    }
    let rows = DMatrix::from_fn(n, dim, |i, j| data.x[i][j]);
    let mean = rows.row_mean().transpose();
    let centered = DMatrix::from_fn(n, dim, |i, j| rows[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let diff = DVector::from_column_slice(x) - mean;
    let (chol, ridge_applied) = match cov.clone().cholesky() {
        Some(c) => (c, false),
        None => {
            let ridged = cov + DMatrix::identity(dim, dim) * MAHALANOBIS_RIDGE;
            let c = ridged
                .cholesky()
                .ok_or_else(|| Error::Numeric("sample covariance is singular even after ridge".into()))?;
            log::warn!("sample covariance singular; added {MAHALANOBIS_RIDGE:e} ridge");
            (c, true)
        }
    };
    let sol = chol.solve(&diff);
    Ok(Mahalanobis { distance: diff.dot(&sol).max(0.0).sqrt(), ridge_applied })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward_ensemble;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn optima_reproduced() {
        for (id, tol) in [
            (BenchmarkId::Peaks, 2e-3),
            (BenchmarkId::Beale, 1e-9),
            (BenchmarkId::Perm3, 1e-9),
            (BenchmarkId::Spring5, 1e-9),
        ] {
            let f = BenchmarkFn::new(id);
            assert!(f.domain.contains(&f.known_opt_point, 0.0));
            let v = f.eval(&f.known_opt_point).unwrap();
            assert!((v - f.known_opt_value).abs() <= tol, "{}: {v}", f.name());
        }
    }

    #[test]
    fn out_of_domain_rejected() {
        let f = BenchmarkFn::from_name("peaks").unwrap();
        assert!(matches!(f.eval(&[3.5, 0.0]), Err(Error::Domain { coord: 0, .. })));
        assert!(BenchmarkFn::from_name("rosenbrock").is_err());
    }

    #[test]
    fn lhs_quartiles() {
        let mut f = BenchmarkFn::new(BenchmarkId::Peaks);
        f.domain = InputBox::unit(2);
        let d = sample_lhs(&f, 4, 9);
        for j in 0..2 {
            let mut q: Vec<usize> = d.x.iter().map(|r| (r[j] * 4.0).floor() as usize).collect();
            q.sort();
            assert_eq!(q, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn lhs_size_and_determinism() {
        let f = BenchmarkFn::new(BenchmarkId::Peaks);
        let a = sample_lhs(&f, 2000, 3);
        assert_eq!(a.len(), 2000);
        assert_eq!(a, sample_lhs(&f, 2000, 3));
        assert!(a.x.iter().all(|r| f.domain.contains(r, 0.0)));
    }

    #[test]
    fn mvn_mean_within_three_standard_errors() {
        let f = BenchmarkFn::new(BenchmarkId::Spring5);
        let n = 10_000;
        let d = sample_mvn(&f, n, 21);
        let sigma = mvn_covariance(&f, 21);
        assert!(d.x.iter().all(|r| f.domain.contains(r, 0.0)));
        for j in 0..5 {
            let mean = d.x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let se = (sigma[(j, j)] / n as f64).sqrt();
            assert!((mean - 4.0).abs() <= 3.0 * se, "coord {j}: mean {mean}, se {se}");
        }
        assert_eq!(d, sample_mvn(&f, n, 21));
    }

    #[test]
    fn mvn_covariance_is_spd_with_scaled_spectrum() {
        let f = BenchmarkFn::new(BenchmarkId::Perm3);
        let s = mvn_covariance(&f, 4);
        let eig = s.symmetric_eigenvalues();
        let scale = (7.0f64 / 6.0).powi(2);
        for v in eig.iter() {
            assert!(*v >= 0.5 * scale - 1e-9 && *v <= 2.0 * scale + 1e-9, "{v}");
        }
    }

    #[test]
    fn csv_roundtrip() {
        let f = BenchmarkFn::new(BenchmarkId::Beale);
        let d = sample_lhs(&f, 17, 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        d.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x1,x2,y\n"));
        let back = Dataset::read_csv(&p).unwrap();
        assert_eq!(back.x, d.x);
        assert_eq!(back.y, d.y);
        assert_eq!(back.provenance, Provenance::Csv);
    }

    fn small_cfg(e: usize, seed: u64) -> TrainConfig {
        TrainConfig { e, layers: vec![8], max_epochs: 60, patience: 20, seed, ..TrainConfig::default() }
    }

    #[test]
    fn trained_peaks_network_fits_holdout() {
        let f = BenchmarkFn::new(BenchmarkId::Peaks);
        let train = sample_lhs(&f, 200, 1);
        let cfg = TrainConfig { e: 1, layers: vec![20], seed: 5, ..TrainConfig::default() };
        let model = train_ensemble(&train, &cfg).unwrap();
        assert_eq!(model.domain, InputBox::unit(2));
        let test = sample_lhs(&f, 500, 77);
        let s = &model.scaler;
        let mse: f64 = test
            .x
            .iter()
            .zip(&test.y)
            .map(|(x, y)| {
                let xs = model.domain.clamp(&s.scale_input(x));
                (forward_ensemble(&model, &xs).unwrap() - s.scale_output(*y)).powi(2)
            })
            .sum::<f64>()
            / test.len() as f64;
        assert!(mse.sqrt() < 0.15, "rmse {}", mse.sqrt());
    }

    #[test]
    fn bagged_networks_differ_and_training_is_deterministic() {
        let f = BenchmarkFn::new(BenchmarkId::Beale);
        let d = sample_lhs(&f, 120, 2);
        let a = train_ensemble(&d, &small_cfg(3, 8)).unwrap();
        let b = train_ensemble(&d, &small_cfg(3, 8)).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.networks.len(), 3);
        assert_ne!(a.networks[0], a.networks[1]);
        assert_ne!(a.networks[1], a.networks[2]);
    }

    #[test]
    fn constant_feature_rejected() {
        let d =
            Dataset::new(vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]], vec![0.0, 1.0, 2.0], Provenance::Csv)
                .unwrap();
        assert!(matches!(train_ensemble(&d, &small_cfg(1, 0)), Err(Error::DegenerateFeature { feature: 0, .. })));
    }

    #[test]
    fn bad_config_rejected() {
        let mut c = TrainConfig::default();
        c.patience = c.max_epochs;
        assert!(c.validate().is_err());
        c = TrainConfig { e: 0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }

    fn gauss_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut m: Vec<Vec<f64>> = a
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = r.clone();
                row.extend((0..n).map(|k| if k == i { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
            m.swap(c, p);
            let piv = m[c][c];
            m[c].iter_mut().for_each(|v| *v /= piv);
            for r in 0..n {
                if r != c {
                    let f = m[r][c];
                    let src = m[c].clone();
                    m[r].iter_mut().zip(&src).for_each(|(v, s)| *v -= f * s);
                }
            }
        }
        m.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    fn textbook(x: &[f64], rows: &[Vec<f64>]) -> f64 {
        let (n, d) = (rows.len() as f64, x.len());
        let mu: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                (0..d).map(|b| rows.iter().map(|r| (r[a] - mu[a]) * (r[b] - mu[b])).sum::<f64>() / (n - 1.0)).collect()
            })
            .collect();
        let inv = gauss_inverse(&cov);
        let diff: Vec<f64> = (0..d).map(|j| x[j] - mu[j]).collect();
        (0..d).map(|a| (0..d).map(|b| diff[a] * inv[a][b] * diff[b]).sum::<f64>()).sum::<f64>().sqrt()
    }

    #[test]
    fn mahalanobis_basic_cases() {
        let rows = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let d = Dataset::new(rows, vec![0.0; 4], Provenance::Csv).unwrap();
        let at_mean = mahalanobis(&[0.0, 0.0], &d).unwrap();
        assert_eq!(at_mean.distance, 0.0);
        assert!(!at_mean.ridge_applied);
        // covariance is (2/3)·I here, so scale the step to one unit of standard deviation
        let step = (2.0f64 / 3.0).sqrt();
        assert!((mahalanobis(&[step, 0.0], &d).unwrap().distance - 1.0).abs() < 1e-12);
        assert!(mahalanobis(&[0.0], &d).is_err());
    }

    #[test]
    fn mahalanobis_singular_gets_ridge() {
        let rows = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let d = Dataset::new(rows, vec![0.0; 4], Provenance::Csv).unwrap();
        let m = mahalanobis(&[1.5, 1.5], &d).unwrap();
        assert!(m.ridge_applied);
        assert!(m.distance.abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn mahalanobis_matches_textbook(seed in 0u64..10_000, dim in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = dim + 3 + (seed % 10) as usize;
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let expected = textbook(&x, &rows);
            let d = Dataset::new(rows, vec![0.0; n], Provenance::Csv).unwrap();
            let got = mahalanobis(&x, &d).unwrap();
            prop_assert!((got.distance - expected).abs() <= 1e-7 * (1.0 + expected), "{} vs {}", got.distance, expected);
        }

        #[test]
        fn lhs_one_sample_per_stratum(seed in 0u64..1000, n in 1usize..60) {
            let f = BenchmarkFn::new(BenchmarkId::Perm3);
            let d = sample_lhs(&f, n, seed);
            for j in 0..3 {
                let (lo, w) = (f.domain.lo[j], f.domain.hi[j] - f.domain.lo[j]);
                let mut seen = vec![false; n];
                for r in &d.x {
                    let s = (((r[j] - lo) / w * n as f64).floor() as usize).min(n - 1);
                    prop_assert!(!seen[s]);
                    seen[s] = true;
                }
            }
        }
    }
}
