//! Ensembles of fully connected ReLU networks: data model, JSON persistence
//! and exact forward evaluation.
//!
//! Every network maps the shared input `x` through ReLU hidden layers and a
//! single affine output neuron. The ensemble prediction is the plain average
//! of the member outputs. All values live in the scaled (training) domain; the
//! attached [`Scaler`] converts back to original units for reporting.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed when checking that a point lies inside the input box.
pub const BOX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    /// One row per neuron of this layer, one column per neuron of the previous layer.
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl LayerWeights {
    pub fn width(&self) -> usize {
        self.b.len()
    }

    pub fn fan_in(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    /// `W v + b`
    pub fn affine(&self, v: &[f64]) -> Vec<f64> {
        self.w.iter().zip(&self.b).map(|(row, b)| row.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() + b).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<LayerWeights>,
}

impl Network {
    /// Number of hidden (ReLU) layers.
    pub fn hidden_layers(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.hidden_layers()].iter().map(LayerWeights::width).collect()
    }

    pub fn output_layer(&self) -> &LayerWeights {
        self.layers.last().expect("validated network has an output layer")
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, LayerWeights::fan_in)
    }

    /// Pre-activations of every hidden layer followed by the output value.
    pub fn trace(&self, x: &[f64]) -> (Vec<Vec<f64>>, f64) {
        let mut hidden = Vec::with_capacity(self.hidden_layers());
        let mut act = x.to_vec();
        for layer in &self.layers[..self.hidden_layers()] {
            let h = layer.affine(&act);
            act = h.iter().map(|v| v.max(0.0)).collect();
            hidden.push(h);
        }
        let out = self.output_layer().affine(&act)[0];
        (hidden, out)
    }

    fn validate(&self, index: usize, input_dim: usize) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidLayer { network: index, layer: 0, msg: "network has no layers".into() });
        }
        let mut prev = input_dim;
        for (l, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| Error::InvalidLayer { network: index, layer: l, msg };
            if layer.w.len() != layer.b.len() {
                return Err(bad(format!("W has {} rows but b has length {}", layer.w.len(), layer.b.len())));
            }
            if layer.b.is_empty() {
                return Err(bad("layer has no neurons".into()));
            }
            for (j, row) in layer.w.iter().enumerate() {
                if row.len() != prev {
                    return Err(bad(format!("row {j} of W has {} columns, expected {prev}", row.len())));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(bad(format!("row {j} of W contains a non-finite weight")));
                }
            }
            if layer.b.iter().any(|v| !v.is_finite()) {
                return Err(bad("bias contains a non-finite value".into()));
            }
            prev = layer.b.len();
        }
        if prev != 1 {
            return Err(Error::InvalidLayer {
                network: index,
                layer: self.layers.len() - 1,
                msg: format!("output layer has {prev} neurons, expected 1"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn unit(dim: usize) -> Self {
        Self { lo: vec![0.0; dim], hi: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    /// Whether `x` lies inside the box up to `tol` per coordinate.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape { expected: self.dim(), got: x.len() });
        }
        for (j, v) in x.iter().enumerate() {
            if !(*v >= self.lo[j] - BOX_TOL && *v <= self.hi[j] + BOX_TOL) {
                return Err(Error::Domain { coord: j, value: *v, lo: self.lo[j], hi: self.hi[j] });
            }
        }
        Ok(())
    }

    /// Clamps `x` into the box.
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.lo.iter().zip(&self.hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect()
    }

    /// Intersection with another box of the same dimension (empty intersections collapse to a point).
    pub fn intersect(&self, other: &InputBox) -> InputBox {
        let lo: Vec<f64> = self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect();
        let hi: Vec<f64> = self.hi.iter().zip(&other.hi).zip(&lo).map(|((a, b), l)| a.min(*b).max(*l)).collect();
        InputBox { lo, hi }
    }

    pub fn is_subset_of(&self, other: &InputBox) -> bool {
        self.lo.iter().zip(&other.lo).all(|(a, b)| a >= b) && self.hi.iter().zip(&other.hi).all(|(a, b)| a <= b)
    }

    fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() {
            return Err(Error::InvalidModel(format!(
                "box bounds have lengths {} and {}",
                self.lo.len(),
                self.hi.len()
            )));
        }
        for (j, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::InvalidModel(format!("box coordinate {j} has invalid bounds [{l}, {h}]")));
            }
        }
        Ok(())
    }
}

/// Min-max scaling between original units and the unit box the networks were trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    pub output_min: f64,
    pub output_max: f64,
}

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Self { input_min: vec![0.0; dim], input_max: vec![1.0; dim], output_min: 0.0, output_max: 1.0 }
    }

    pub fn scale_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, v)| (v - self.input_min[j]) / (self.input_max[j] - self.input_min[j])).collect()
    }

    pub fn unscale_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, v)| v * (self.input_max[j] - self.input_min[j]) + self.input_min[j]).collect()
    }

    pub fn scale_output(&self, y: f64) -> f64 {
        (y - self.output_min) / (self.output_max - self.output_min)
    }

    pub fn unscale_output(&self, v: f64) -> f64 {
        v * (self.output_max - self.output_min) + self.output_min
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.input_min.len() != dim || self.input_max.len() != dim {
            return Err(Error::InvalidModel(format!("scaler must have {dim} input coordinates")));
        }
        for j in 0..dim {
            let (lo, hi) = (self.input_min[j], self.input_max[j]);
            if !lo.is_finite() || !hi.is_finite() || hi <= lo {
                return Err(Error::InvalidModel(format!("scaler input {j} has range [{lo}, {hi}]")));
            }
        }
        if !self.output_min.is_finite() || !self.output_max.is_finite() || self.output_max <= self.output_min {
            return Err(Error::InvalidModel(format!(
                "scaler output range [{}, {}] is invalid",
                self.output_min, self.output_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveSense {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub input_dim: usize,
    pub sense: ObjectiveSense,
    #[serde(rename = "box")]
    pub domain: InputBox,
    pub scaler: Scaler,
    pub networks: Vec<Network>,
}

impl EnsembleModel {
    pub fn new(networks: Vec<Network>, domain: InputBox, scaler: Scaler, sense: ObjectiveSense) -> Result<Self> {
        let input_dim = domain.dim();
        let m = Self { input_dim, sense, domain, scaler, networks };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.networks.is_empty() {
            return Err(Error::InvalidModel("ensemble has no networks".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::InvalidModel("input dimension must be positive".into()));
        }
        if self.domain.dim() != self.input_dim {
            return Err(Error::InvalidModel(format!(
                "box has dimension {}, input_dim is {}",
                self.domain.dim(),
                self.input_dim
            )));
        }
        self.domain.validate()?;
        self.scaler.validate(self.input_dim)?;
        for (i, net) in self.networks.iter().enumerate() {
            net.validate(i, self.input_dim)?;
        }
        Ok(())
    }

    pub fn ensemble_size(&self) -> usize {
        self.networks.len()
    }

    /// Largest number of hidden layers over the members.
    pub fn depth(&self) -> usize {
        self.networks.iter().map(Network::hidden_layers).max().unwrap_or(0)
    }

    /// +1 for maximization, -1 for minimization.
    pub fn objective_sign(&self) -> f64 {
        match self.sense {
            ObjectiveSense::Max => 1.0,
            ObjectiveSense::Min => -1.0,
        }
    }

    /// Copy whose output layers are negated when minimizing, so that
    /// maximizing its output is equivalent to optimizing `self`.
    pub fn to_max_form(&self) -> EnsembleModel {
        let mut m = self.clone();
        if self.sense == ObjectiveSense::Min {
            for net in &mut m.networks {
                let out = net.layers.last_mut().expect("validated");
                for row in &mut out.w {
                    for v in row.iter_mut() {
                        *v = -*v;
                    }
                }
                for b in &mut out.b {
                    *b = -*b;
                }
            }
            m.sense = ObjectiveSense::Max;
        }
        m
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: EnsembleModel = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path.as_ref())?;
        f.write_all(self.to_json()?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// JSON text with every float written with 17 significant digits.
    pub fn to_json(&self) -> Result<String> {
        to_json_full_precision(self)
    }
}

/// Writes floats as `d.dddddddddddddddde±x` (17 significant digits).
struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

pub fn to_json_full_precision<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
    value.serialize(&mut ser).map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

/// Exact output of one network at `x`.
pub fn forward_network(net: &Network, x: &[f64]) -> Result<f64> {
    let dim = net.input_dim();
    if x.len() != dim {
        return Err(Error::Shape { expected: dim, got: x.len() });
    }
    Ok(net.trace(x).1)
}

/// Average member output at `x`, which must lie in the model box.
pub fn forward_ensemble(model: &EnsembleModel, x: &[f64]) -> Result<f64> {
    model.domain.check(x)?;
    let mut sum = 0.0;
    for net in &model.networks {
        sum += forward_network(net, x)?;
    }
    Ok(sum / model.networks.len() as f64)
}

/// Maps a scaled objective value back to original output units.
pub fn unscale_objective(model: &EnsembleModel, v_scaled: f64) -> f64 {
    model.scaler.unscale_output(v_scaled)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn layer(w: Vec<Vec<f64>>, b: Vec<f64>) -> LayerWeights {
        LayerWeights { w, b }
    }

    pub fn random_network(rng: &mut impl Rng, input_dim: usize, widths: &[usize]) -> Network {
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &w in widths.iter().chain(std::iter::once(&1)) {
            let scale = (2.0 / prev as f64).sqrt();
            layers.push(LayerWeights {
                w: (0..w).map(|_| (0..prev).map(|_| rng.random_range(-1.0..1.0) * scale).collect()).collect(),
                b: (0..w).map(|_| rng.random_range(-0.5..0.5)).collect(),
            });
            prev = w;
        }
        Network { layers }
    }

    fn toy_net() -> Network {
        Network { layers: vec![layer(vec![vec![1.0, -1.0]], vec![0.5]), layer(vec![vec![1.0]], vec![0.0])] }
    }

    fn wrap(nets: Vec<Network>, dim: usize) -> EnsembleModel {
        EnsembleModel::new(nets, InputBox::unit(dim), Scaler::identity(dim), ObjectiveSense::Max).unwrap()
    }

    #[test]
    fn forward_active_and_clamped() {
        let net = toy_net();
        assert_eq!(forward_network(&net, &[1.0, 0.0]).unwrap(), 1.5);
        assert_eq!(forward_network(&net, &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(forward_network(&net, &[1.0]), Err(Error::Shape { expected: 2, got: 1 })));
    }

    #[test]
    fn forward_matches_straight_line_interpreter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let net = random_network(&mut rng, 3, &[4, 5]);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            // Hand interpreter written against the raw weight arrays.
            let l0 = &net.layers[0];
            let mut a = [0.0; 4];
            for j in 0..4 {
                let mut s = l0.b[j];
                for k in 0..3 {
                    s += l0.w[j][k] * x[k];
                }
                a[j] = if s > 0.0 { s } else { 0.0 };
            }
            let l1 = &net.layers[1];
            let mut c = [0.0; 5];
            for j in 0..5 {
                let mut s = l1.b[j];
                for k in 0..4 {
                    s += l1.w[j][k] * a[k];
                }
                c[j] = if s > 0.0 { s } else { 0.0 };
            }
            let l2 = &net.layers[2];
            let mut out = l2.b[0];
            for k in 0..5 {
                out += l2.w[0][k] * c[k];
            }
            assert!((forward_network(&net, &x).unwrap() - out).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nets: Vec<Network> = (0..3).map(|_| random_network(&mut rng, 2, &[3])).collect();
        let x = [0.3, 0.8];
        let m1 = wrap(vec![nets[0].clone()], 2);
        assert_eq!(forward_ensemble(&m1, &x).unwrap(), forward_network(&nets[0], &x).unwrap());
        let m2 = wrap(vec![nets[0].clone(), nets[0].clone()], 2);
        assert!((forward_ensemble(&m2, &x).unwrap() - forward_network(&nets[0], &x).unwrap()).abs() < 1e-15);
        let m3 = wrap(nets.clone(), 2);
        let mean = nets.iter().map(|n| forward_network(n, &x).unwrap()).sum::<f64>() / 3.0;
        assert!((forward_ensemble(&m3, &x).unwrap() - mean).abs() < 1e-12);
        assert!(matches!(forward_ensemble(&m3, &[1.5, 0.0]), Err(Error::Domain { coord: 0, .. })));
    }

    #[test]
    fn unscale_endpoints() {
        let mut m = wrap(vec![toy_net()], 2);
        assert_eq!(unscale_objective(&m, 0.3), 0.3);
        m.scaler.output_min = -6.551;
        m.scaler.output_max = 8.1;
        assert_eq!(unscale_objective(&m, 0.0), -6.551);
        assert_eq!(unscale_objective(&m, 1.0), 8.1);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let nets: Vec<Network> = (0..2).map(|_| random_network(&mut rng, 3, &[5, 4])).collect();
        let m = wrap(nets, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = EnsembleModel::load(&path).unwrap();
        assert_eq!(back, m);
        for (a, b) in m.networks.iter().zip(&back.networks) {
            for (la, lb) in a.layers.iter().zip(&b.layers) {
                for (ra, rb) in la.w.iter().zip(&lb.w) {
                    for (x, y) in ra.iter().zip(rb) {
                        assert_eq!(x.to_bits(), y.to_bits());
                    }
                }
            }
        }
        let text = m.to_json().unwrap();
        assert!(text.starts_with("{\"input_dim\":3,\"sense\":\"max\",\"box\":"));
    }

    #[test]
    fn malformed_files_are_rejected_with_location() {
        let m = wrap(vec![toy_net()], 2);
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        v["networks"][0]["layers"][1]["b"] = serde_json::json!([0.0, 1.0]);
        let err = EnsembleModel::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, Error::InvalidLayer { network: 0, layer: 1, .. }), "{err}");

        let text = m.to_json().unwrap().replacen("5.0000000000000000e-1", "NaN", 1);
        assert!(EnsembleModel::from_json(&text).is_err());
        let text = m.to_json().unwrap().replacen("5.0000000000000000e-1", "\"NaN\"", 1);
        assert!(EnsembleModel::from_json(&text).is_err());
    }

    #[test]
    fn min_form_negates_output_layer() {
        let mut m = wrap(vec![toy_net()], 2);
        m.sense = ObjectiveSense::Min;
        let f = m.to_max_form();
        let x = [1.0, 0.0];
        assert_eq!(forward_ensemble(&f, &x).unwrap(), -forward_ensemble(&m, &x).unwrap());
        assert_eq!(f.sense, ObjectiveSense::Max);
    }

    proptest::proptest! {
        #[test]
        fn ensemble_is_permutation_invariant(seed in 0u64..1000, x0 in 0.0..1.0f64, x1 in 0.0..1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nets: Vec<Network> = (0..3).map(|_| random_network(&mut rng, 2, &[3, 2])).collect();
            let a = wrap(nets.clone(), 2);
            let mut rev = nets;
            rev.reverse();
            let b = wrap(rev, 2);
            let x = [x0, x1];
            proptest::prop_assert!((forward_ensemble(&a, &x).unwrap() - forward_ensemble(&b, &x).unwrap()).abs() < 1e-12);
            for net in &a.networks {
                let (hidden, out) = net.trace(&x);
                let last: Vec<f64> = hidden.last().unwrap().iter().map(|v| v.max(0.0)).collect();
                proptest::prop_assert!((net.output_layer().affine(&last)[0] - out).abs() < 1e-12);
            }
        }
    }
}
