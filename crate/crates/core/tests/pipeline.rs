use ennopt_core::bench::{sample_lhs, train_ensemble, BenchmarkFn, BenchmarkId, TrainConfig};
use ennopt_core::driver::{optimize_baseline, optimize_two_phase, Mode, RunConfig};
use ennopt_core::model::{
    forward_ensemble, unscale_objective, EnsembleModel, InputBox, LayerWeights, Network, ObjectiveSense, Scaler,
};
use ennopt_core::oracle::{enumerate_patterns_exact, grid_search, verify_solution};
use ennopt_core::tighten::TightenParams;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(rng: &mut ChaCha8Rng, dim: usize, widths: &[usize]) -> Network {
    let mut layers = Vec::new();
    let mut prev = dim;
    for &w in widths.iter().chain([1].iter()) {
        let s = (2.0 / prev as f64).sqrt();
        layers.push(LayerWeights {
            w: (0..w).map(|_| (0..prev).map(|_| rng.random_range(-1.0..1.0) * s).collect()).collect(),
            b: (0..w).map(|_| rng.random_range(-0.5..0.5)).collect(),
        });
        prev = w;
    }
    Network { layers }
}

fn random_model(seed: u64, e: usize, dim: usize, widths: &[usize], sense: ObjectiveSense) -> EnsembleModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nets = (0..e).map(|_| random_net(&mut rng, dim, widths)).collect();
    let scaler = Scaler { input_min: vec![-1.0; dim], input_max: vec![2.0; dim], output_min: 3.0, output_max: 5.0 };
    EnsembleModel::new(nets, InputBox::unit(dim), scaler, sense).unwrap()
}

fn short(mode: Mode) -> RunConfig {
    RunConfig {
        mode,
        phase1_limit: 20.0,
        total_limit: 60.0,
        tighten: TightenParams { k: 100, ..TightenParams::default() },
        ..RunConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn modes_agree_with_each_other_and_the_oracle(seed in 0u64..100_000, e in 1usize..4, dim in 1usize..4, width in 1usize..5, max in any::<bool>()) {
        let sense = if max { ObjectiveSense::Max } else { ObjectiveSense::Min };
        let model = random_model(seed, e, dim, &[width], sense);
        let exact = enumerate_patterns_exact(&model, &model.domain).unwrap();
        let b = optimize_baseline(&model, &short(Mode::Baseline)).unwrap();
        let t = optimize_two_phase(&model, &short(Mode::TwoPhase)).unwrap();
        prop_assert!(b.solved && t.solved);
        prop_assert!((b.objective - t.objective).abs() <= 1e-5);
        prop_assert!((t.objective - exact.value).abs() <= 1e-5);
        for r in [&b, &t] {
            let fwd = forward_ensemble(&model, &r.x).unwrap();
            prop_assert!((r.objective_unscaled - unscale_objective(&model, fwd)).abs() <= 1e-6);
            prop_assert!(r.times.preprocess + r.times.phase1 + r.times.phase2 <= r.times.total + 1.0);
            prop_assert!(verify_solution(&model, &r.x, r.objective, 1e-6).passed);
        }
    }
}

#[test]
fn oracle_dominates_dense_random_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..3 {
        let model = random_model(seed, 2, 2, &[4, 3], ObjectiveSense::Max);
        let exact = enumerate_patterns_exact(&model, &model.domain).unwrap();
        let sampled = (0..100_000)
            .map(|_| {
                let x = [rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)];
                forward_ensemble(&model, &x).unwrap()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(exact.value >= sampled - 1e-9, "{} < {sampled}", exact.value);
        let (_, grid) = grid_search(&model, &model.domain, 33).unwrap();
        assert!(grid <= exact.value + 1e-9);
    }
}

#[test]
fn time_limited_run_reports_a_valid_bound() {
    let model = random_model(5, 3, 3, &[12, 12], ObjectiveSense::Max);
    let cfg = RunConfig { mode: Mode::Baseline, phase1_limit: 1.0, total_limit: 1.0, ..RunConfig::default() };
    let r = optimize_baseline(&model, &cfg).unwrap();
    let (_, grid) = grid_search(&model, &model.domain, 21).unwrap();
    assert!(r.bound >= grid - 1e-9);
    assert!(r.bound >= r.objective);
    assert!(r.times.total <= 1.0 * 1.1 + 0.5, "took {}", r.times.total);
    if !r.solved {
        assert!(r.gap > 0.0);
        assert!(r.time_gap > r.times.total);
    }
}

#[test]
fn trained_surrogate_solution_lands_near_the_sampled_minimum() {
    let f = BenchmarkFn::new(BenchmarkId::Beale);
    let data = sample_lhs(&f, 400, 3);
    let cfg = TrainConfig { e: 2, layers: vec![8], max_epochs: 300, patience: 40, seed: 3, ..TrainConfig::default() };
    let model = train_ensemble(&data, &cfg).unwrap();
    let r = optimize_two_phase(&model, &short(Mode::TwoPhase)).unwrap();
    assert!(r.solved);
    assert_eq!(r.instance.e, 2);
    // The optimized surrogate must beat the surrogate at every training point.
    let best_on_data = data
        .x
        .iter()
        .map(|x| forward_ensemble(&model, &model.domain.clamp(&model.scaler.scale_input(x))).unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(r.objective <= best_on_data + 1e-7);
    assert!(f.domain.contains(&r.x_unscaled, 1e-9));
}
