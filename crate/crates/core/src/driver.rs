//! End-to-end orchestration: bound tightening, big-M branch-and-cut, and the
//! Lagrangian spatial search, plus the plain big-M baseline.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::benders::{audit_cuts, CutSeparator};
use crate::bnb::{compute_gap, solve_milp, BnbParams, CutRow, SolveStatus};
use crate::formulation::{build_bigm, MilpModel, NeuronBounds};
use crate::lagrange::{pattern_at, phase_two_solve, Phase2Params};
use crate::model::{forward_ensemble, EnsembleModel, ObjectiveSense};
use crate::tighten::{lp_tighten_all, targeted_bounds, TightenParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    TwoPhase,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "two_phase" | "two-phase" => Ok(Mode::TwoPhase),
            other => Err(Error::Parameter(format!("unknown mode '{other}' (expected baseline or two_phase)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    /// Seconds given to phase one.
    pub phase1_limit: f64,
    /// Seconds for the whole run.
    pub total_limit: f64,
    pub tighten: TightenParams,
    pub phase2: Phase2Params,
    pub seed: u64,
    pub threads: usize,
    /// Instance label copied into the report.
    pub instance: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::TwoPhase,
            phase1_limit: 180.0,
            total_limit: 3600.0,
            tighten: TightenParams::default(),
            phase2: Phase2Params::default(),
            seed: 0,
            threads: 1,
            instance: String::from("instance"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_limit > 0.0) || !(self.phase1_limit >= 0.0) {
            return Err(Error::Parameter("time limits must be positive".into()));
        }
        if self.phase1_limit > self.total_limit {
            return Err(Error::Parameter(format!(
                "phase-one limit {} exceeds the total limit {}",
                self.phase1_limit, self.total_limit
            )));
        }
        if self.tighten.k == 0 || self.tighten.tau < 0.0 {
            return Err(Error::Parameter("K must be positive and tau non-negative".into()));
        }
        let p = &self.phase2;
        if !(p.delta > 0.0 && p.epsilon > 0.0 && p.mu0 > 0.0) {
            return Err(Error::Parameter("delta, epsilon and mu0 must be positive".into()));
        }
        if self.threads == 0 {
            return Err(Error::Parameter("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub name: String,
    pub input_dim: usize,
    pub e: usize,
    #[serde(rename = "L")]
    pub depth: usize,
    pub widths: Vec<usize>,
    pub sense: ObjectiveSense,
}

impl InstanceInfo {
    fn of(model: &EnsembleModel, name: &str) -> Self {
        Self {
            name: name.to_string(),
            input_dim: model.input_dim,
            e: model.ensemble_size(),
            depth: model.depth(),
            widths: model.networks.first().map(|n| n.hidden_widths()).unwrap_or_default(),
            sense: model.sense,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub preprocess: f64,
    pub phase1: f64,
    pub phase2: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageNodes {
    pub survey: usize,
    pub phase1: usize,
    pub phase2: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CutCounts {
    pub generated: usize,
    pub added: usize,
    /// Generated cuts violated by the reported solution.
    pub violated_by_solution: usize,
}

/// Outcome of one optimization run. Objective values are in the model's own
/// sense; `gap` is a fraction computed in scaled output units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub instance: InstanceInfo,
    pub mode: Mode,
    pub seed: u64,
    pub times: StageTimes,
    pub solved: bool,
    /// Solution in the model's scaled input space.
    pub x: Vec<f64>,
    /// Solution in original input units.
    pub x_unscaled: Vec<f64>,
    pub objective: f64,
    pub objective_unscaled: f64,
    pub bound: f64,
    pub bound_unscaled: f64,
    pub gap: f64,
    pub nodes: StageNodes,
    pub cuts: CutCounts,
    pub critical_neurons: usize,
    pub phase1_status: SolveStatus,
    pub phase2_status: Option<SolveStatus>,
    pub time_gap: f64,
}

/// Column order of [`RunReport::csv_row`].
pub const REPORT_CSV_HEADER: &str = "instance,mode,e,L,input_dim,solved,objective,objective_unscaled,bound,gap,\
time_preprocess,time_phase1,time_phase2,time_total,nodes_survey,nodes_phase1,nodes_phase2,cuts_generated,cuts_added,time_gap";

impl RunReport {
    pub fn csv_row(&self) -> String {
        let mode = match self.mode {
            Mode::Baseline => "baseline",
            Mode::TwoPhase => "two_phase",
        };
        let name = if self.instance.name.contains([',', '"']) {
            format!("\"{}\"", self.instance.name.replace('"', "\"\""))
        } else {
            self.instance.name.clone()
        };
        format!(
            "{name},{mode},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.instance.e,
            self.instance.depth,
            self.instance.input_dim,
            self.solved,
            self.objective,
            self.objective_unscaled,
            self.bound,
            self.gap,
            self.times.preprocess,
            self.times.phase1,
            self.times.phase2,
            self.times.total,
            self.nodes.survey,
            self.nodes.phase1,
            self.nodes.phase2,
            self.cuts.generated,
            self.cuts.added,
            self.time_gap
        )
    }

    pub fn to_json(&self) -> Result<String> {
        crate::model::to_json_full_precision(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `t + 3600·gap`, with the gap as a fraction.
pub fn time_gap(t: f64, gap: f64) -> f64 {
    t + 3600.0 * gap
}

/// A report together with the artifacts needed to audit it.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    /// Phase-one formulation (maximization form) the cuts refer to.
    pub milp: MilpModel,
    pub cuts: Vec<CutRow>,
    pub bounds: NeuronBounds,
}

impl RunOutput {
    /// Number of generated cuts violated by the forward point at `x` (scaled
    /// inputs). `None` when `x` falls outside the formulation's bounds.
    pub fn audit_point(&self, model: &EnsembleModel, x: &[f64]) -> Option<usize> {
        let max = model.to_max_form();
        let v = self.milp.point_from_input(&max, x)?;
        Some(audit_cuts(&self.cuts, &v))
    }
}

fn remaining(t0: &Instant, limit: f64) -> f64 {
    (limit - t0.elapsed().as_secs_f64()).max(0.0)
}

struct Best {
    x: Vec<f64>,
    /// Forward value in maximization form.
    value: f64,
}

impl Best {
    fn at(max: &EnsembleModel, x: Vec<f64>) -> Result<Self> {
        let value = forward_ensemble(max, &x)?;
        Ok(Self { x, value })
    }

    fn consider(&mut self, max: &EnsembleModel, x: Vec<f64>) -> Result<()> {
        let cand = Best::at(max, x)?;
        if cand.value > self.value {
            *self = cand;
        }
        Ok(())
    }
}

struct Partial {
    times: StageTimes,
    nodes: StageNodes,
    best: Best,
    bound_max: f64,
    phase1_status: SolveStatus,
    phase2_status: Option<SolveStatus>,
    critical: usize,
    generated: Vec<CutRow>,
    added: usize,
}

fn finish(model: &EnsembleModel, cfg: &RunConfig, milp: MilpModel, bounds: NeuronBounds, p: Partial) -> RunOutput {
    let sign = model.objective_sign();
    let max = model.to_max_form();
    let bound_max = p.bound_max.max(p.best.value);
    let gap = compute_gap(bound_max, p.best.value);
    let solved = gap == 0.0;
    let objective = sign * p.best.value;
    let bound = sign * bound_max;
    let violated = milp.point_from_input(&max, &p.best.x).map_or(0, |v| audit_cuts(&p.generated, &v));
    let report = RunReport {
        instance: InstanceInfo::of(model, &cfg.instance),
        mode: cfg.mode,
        seed: cfg.seed,
        solved,
        x_unscaled: model.scaler.unscale_input(&p.best.x),
        x: p.best.x,
        objective,
        objective_unscaled: model.scaler.unscale_output(objective),
        bound,
        bound_unscaled: model.scaler.unscale_output(bound),
        gap,
        nodes: p.nodes,
        cuts: CutCounts { generated: p.generated.len(), added: p.added, violated_by_solution: violated },
        critical_neurons: p.critical,
        phase1_status: p.phase1_status,
        phase2_status: p.phase2_status,
        time_gap: time_gap(p.times.total, if solved { 0.0 } else { gap }),
        times: p.times,
    };
    RunOutput { report, milp, cuts: p.generated, bounds }
}

/// Targeted tightening, phase one with lazy dual cuts, then the Lagrangian
/// spatial search on whatever phase one left open.
pub fn optimize_two_phase(model: &EnsembleModel, cfg: &RunConfig) -> Result<RunReport> {
    Ok(optimize_two_phase_detailed(model, cfg)?.report)
}

pub fn optimize_two_phase_detailed(model: &EnsembleModel, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    model.validate()?;
    let t0 = Instant::now();
    let max = model.to_max_form();
    let domain = &max.domain;

    let tighten = TightenParams {
        budget: Some(cfg.phase1_limit.min(cfg.total_limit)),
        threads: cfg.threads,
        ..cfg.tighten.clone()
    };
    let stages = targeted_bounds(&max, domain, &tighten)?;
    let preprocess = t0.elapsed().as_secs_f64();
    log::info!("preprocessing done in {preprocess:.2}s");

    let milp = build_bigm(&max, &stages.targeted, domain)?;
    let single = max.ensemble_size() < 2;
    let p1_limit =
        if single { remaining(&t0, cfg.total_limit) } else { cfg.phase1_limit.min(remaining(&t0, cfg.total_limit)) };
    let t1 = Instant::now();
    let mut sep = CutSeparator::new(&max, true);
    let params = BnbParams { time_limit: Some(p1_limit), ..BnbParams::default() };
    let (inc, p1) = solve_milp(&milp, &params, &mut sep);
    let phase1 = t1.elapsed().as_secs_f64();
    log::info!("phase one: {:?} after {} nodes, bound {:.6}", p1.status, p1.nodes_processed, p1.best_bound);

    let mut best = Best::at(&max, domain.center())?;
    if let Some(inc) = &inc {
        best.consider(&max, domain.clamp(&milp.x_of(&inc.values)))?;
    }
    let mut bound_max = if p1.status == SolveStatus::Infeasible { best.value } else { p1.best_bound };
    let mut nodes = StageNodes { survey: stages.ledger.surveyed_nodes, phase1: p1.nodes_processed, phase2: 0 };
    let mut phase2 = 0.0;
    let mut phase2_status = None;

    let open = compute_gap(bound_max.max(best.value), best.value) > 0.0;
    if open && !single && p1.status != SolveStatus::Optimal {
        let t2 = Instant::now();
        let z_bar = pattern_at(&max, &best.x);
        let p2 =
            Phase2Params { time_limit: remaining(&t0, cfg.total_limit), threads: cfg.threads, ..cfg.phase2.clone() };
        let r = phase_two_solve(&max, &stages.targeted, (&best.x, best.value), &z_bar, &p2)?;
        best.consider(&max, r.x.clone())?;
        bound_max = bound_max.min(r.stats.best_bound);
        nodes.phase2 = r.stats.nodes_processed;
        phase2_status = Some(r.stats.status);
        phase2 = t2.elapsed().as_secs_f64();
        log::info!("phase two: {:?} after {} nodes, bound {:.6}", r.stats.status, r.stats.nodes_processed, bound_max);
    }

    let partial = Partial {
        times: StageTimes { preprocess, phase1, phase2, total: t0.elapsed().as_secs_f64() },
        nodes,
        best,
        bound_max,
        phase1_status: p1.status,
        phase2_status,
        critical: stages.critical.len(),
        added: sep.added,
        generated: std::mem::take(&mut sep.generated),
    };
    Ok(finish(model, cfg, milp, stages.targeted, partial))
}

/// LP-tightened big-M model solved by plain branch-and-bound.
pub fn optimize_baseline(model: &EnsembleModel, cfg: &RunConfig) -> Result<RunReport> {
    Ok(optimize_baseline_detailed(model, cfg)?.report)
}

pub fn optimize_baseline_detailed(model: &EnsembleModel, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    model.validate()?;
    let t0 = Instant::now();
    let max = model.to_max_form();
    let domain = &max.domain;
    let bounds = lp_tighten_all(&max, domain)?;
    let preprocess = t0.elapsed().as_secs_f64();
    let milp = build_bigm(&max, &bounds, domain)?;
    let t1 = Instant::now();
    let params = BnbParams { time_limit: Some(remaining(&t0, cfg.total_limit)), ..BnbParams::default() };
    let mut sep = CutSeparator::new(&max, false);
    let (inc, st) = solve_milp(&milp, &params, &mut sep);
    let phase1 = t1.elapsed().as_secs_f64();
    let mut best = Best::at(&max, domain.center())?;
    if let Some(inc) = &inc {
        best.consider(&max, domain.clamp(&milp.x_of(&inc.values)))?;
    }
    let bound_max = if st.status == SolveStatus::Infeasible { best.value } else { st.best_bound };
    let partial = Partial {
        times: StageTimes { preprocess, phase1, phase2: 0.0, total: t0.elapsed().as_secs_f64() },
        nodes: StageNodes { survey: 0, phase1: st.nodes_processed, phase2: 0 },
        best,
        bound_max,
        phase1_status: st.status,
        phase2_status: None,
        critical: 0,
        generated: Vec::new(),
        added: 0,
    };
    Ok(finish(model, cfg, milp, bounds, partial))
}

pub fn optimize(model: &EnsembleModel, cfg: &RunConfig) -> Result<RunReport> {
    Ok(optimize_detailed(model, cfg)?.report)
}

pub fn optimize_detailed(model: &EnsembleModel, cfg: &RunConfig) -> Result<RunOutput> {
    match cfg.mode {
        Mode::Baseline => optimize_baseline_detailed(model, cfg),
        Mode::TwoPhase => optimize_two_phase_detailed(model, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{layer, random_network};
    use crate::model::{unscale_objective, InputBox, Network, Scaler};
    use crate::oracle::enumerate_patterns_exact;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quick(mode: Mode) -> RunConfig {
        RunConfig {
            mode,
            phase1_limit: 20.0,
            total_limit: 60.0,
            tighten: TightenParams { k: 50, ..TightenParams::default() },
            ..RunConfig::default()
        }
    }

    fn random_model(seed: u64, e: usize, dim: usize, widths: &[usize], sense: ObjectiveSense) -> EnsembleModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets: Vec<Network> = (0..e).map(|_| random_network(&mut rng, dim, widths)).collect();
        let scaler =
            Scaler { input_min: vec![-2.0; dim], input_max: vec![3.0; dim], output_min: -4.0, output_max: 6.0 };
        EnsembleModel::new(nets, InputBox::unit(dim), scaler, sense).unwrap()
    }

    #[test]
    fn time_gap_examples() {
        assert_eq!(time_gap(42.0, 0.0), 42.0);
        assert_eq!(time_gap(3600.0, 0.1), 3960.0);
        assert_eq!(time_gap(0.0, 0.0), 0.0);
    }

    #[test]
    fn defaults_match_the_published_settings() {
        let c = RunConfig::default();
        assert_eq!((c.phase1_limit, c.total_limit), (180.0, 3600.0));
        assert_eq!((c.tighten.k, c.tighten.tau, c.tighten.milp_time_limit), (1000, 0.01, 5.0));
        assert_eq!((c.phase2.delta, c.phase2.epsilon, c.phase2.mu0, c.phase2.q_init), (0.02, 0.02, 0.05, 20));
        let bad = RunConfig { phase1_limit: 4000.0, ..RunConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pure_affine_model_needs_one_node() {
        let net = Network { layers: vec![layer(vec![vec![1.0, -2.0]], vec![0.5])] };
        let model = EnsembleModel::new(vec![net], InputBox::unit(2), Scaler::identity(2), ObjectiveSense::Max).unwrap();
        let r = optimize_baseline(&model, &quick(Mode::Baseline)).unwrap();
        assert_eq!(r.nodes.phase1, 1);
        assert!(r.solved);
        assert!((r.objective - 1.5).abs() < 1e-9);
    }

    #[test]
    fn modes_agree_with_the_oracle() {
        for seed in 0..6u64 {
            let e = 1 + (seed as usize % 3);
            let sense = if seed % 2 == 0 { ObjectiveSense::Max } else { ObjectiveSense::Min };
            let model = random_model(seed, e, 2, &[4], sense);
            let exact = enumerate_patterns_exact(&model, &model.domain).unwrap();
            let b = optimize_baseline(&model, &quick(Mode::Baseline)).unwrap();
            let t = optimize_two_phase(&model, &quick(Mode::TwoPhase)).unwrap();
            for r in [&b, &t] {
                assert!(r.solved, "seed {seed}: {r:?}");
                assert!((r.objective - exact.value).abs() < 1e-5, "seed {seed}: {} vs {}", r.objective, exact.value);
                let fwd = forward_ensemble(&model, &r.x).unwrap();
                assert!((r.objective_unscaled - unscale_objective(&model, fwd)).abs() < 1e-6);
                assert_eq!(r.time_gap, r.times.total);
                assert_eq!(r.cuts.violated_by_solution, 0);
            }
        }
    }

    #[test]
    fn single_network_skips_phase_two() {
        let model = random_model(3, 1, 2, &[6, 4], ObjectiveSense::Max);
        let r = optimize_two_phase(&model, &quick(Mode::TwoPhase)).unwrap();
        assert_eq!(r.phase2_status, None);
        assert_eq!(r.times.phase2, 0.0);
        assert!(r.solved);
    }

    #[test]
    fn phase_two_runs_when_phase_one_is_cut_short() {
        let model = random_model(11, 3, 3, &[10, 10], ObjectiveSense::Max);
        let mut cfg = quick(Mode::TwoPhase);
        cfg.phase1_limit = 0.0;
        cfg.total_limit = 30.0;
        let out = optimize_two_phase_detailed(&model, &cfg).unwrap();
        let r = &out.report;
        assert!(r.phase2_status.is_some());
        assert!(r.bound >= r.objective - 1e-9);
        let exact = enumerate_patterns_exact(&model, &model.domain);
        if let Ok(exact) = exact {
            assert!(r.bound >= exact.value - 1e-6);
        }
        assert!(r.times.preprocess + r.times.phase1 + r.times.phase2 <= r.times.total + 1.0);
    }

    #[test]
    fn report_roundtrip_and_csv_shape() {
        let model = random_model(2, 2, 2, &[3], ObjectiveSense::Min);
        let r = optimize_two_phase(&model, &quick(Mode::TwoPhase)).unwrap();
        let back = RunReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.csv_row().split(',').count(), REPORT_CSV_HEADER.split(',').count());
    }
}
