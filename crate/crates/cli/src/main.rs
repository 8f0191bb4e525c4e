use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ennopt_core::bench::{sample_lhs, sample_mvn, train_ensemble, BenchmarkFn, Dataset, TrainConfig};
use ennopt_core::driver::{optimize, Mode, RunConfig, RunReport, REPORT_CSV_HEADER};
use ennopt_core::lagrange::Phase2Params;
use ennopt_core::model::{EnsembleModel, ObjectiveSense};
use ennopt_core::oracle::enumerate_patterns_exact_threads;
use ennopt_core::tighten::TightenParams;

#[derive(Parser)]
#[command(name = "ennopt", version, about = "Global optimization over ensembles of ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads used inside solver stages.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a benchmark function into a CSV dataset.
    Sample {
        #[arg(long = "fn")]
        function: String,
        #[arg(long, value_enum, default_value_t = Method::Lhs)]
        method: Method,
        /// Number of samples; defaults to the usual size for the function.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a bagged ensemble on a CSV dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        e: usize,
        /// Hidden layer widths, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "20")]
        layers: Vec<usize>,
        #[arg(long, default_value_t = 0.005)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 2000)]
        max_epochs: usize,
        #[arg(long, default_value_t = 100)]
        patience: usize,
        #[arg(long, value_enum, default_value_t = SenseArg::Min)]
        sense: SenseArg,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Optimize a trained ensemble.
    Optimize(OptimizeArgs),
    /// Exact optimum by activation-pattern enumeration (small models only).
    Oracle {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate run reports into a summary table.
    Report {
        #[arg(long)]
        glob: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::TwoPhase)]
    mode: ModeArg,
    #[arg(long, default_value_t = 3600.0)]
    time_limit: f64,
    #[arg(long, default_value_t = 180.0)]
    phase1_limit: f64,
    #[arg(long = "K", default_value_t = 1000)]
    k: usize,
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    #[arg(long, default_value_t = 0.02)]
    delta: f64,
    #[arg(long, default_value_t = 0.02)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    mu0: f64,
    #[arg(long = "Q", default_value_t = 20)]
    q: usize,
    /// Instance label; defaults to the model file stem.
    #[arg(long)]
    instance: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the report as a headed one-line CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Lhs,
    Mvn,
}

#[derive(Clone, Copy, ValueEnum)]
enum SenseArg {
    Min,
    Max,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    #[value(name = "two_phase", alias = "two-phase")]
    TwoPhase,
}

#[derive(Serialize)]
struct OracleOutput {
    x: Vec<f64>,
    x_unscaled: Vec<f64>,
    value: f64,
    value_unscaled: f64,
    free_neurons: usize,
    feasible_patterns: usize,
}

fn init_logging() {
    let level = std::env::var("ENNOPT_LOG").unwrap_or_else(|_| "warn".into());
    let filter = match level.as_str() {
        "off" | "info" | "trace" | "warn" | "debug" | "error" => level,
        other => {
            eprintln!("warning: ENNOPT_LOG={other} not recognised, using warn");
            "warn".into()
        }
    };
    env_logger::Builder::new().parse_filters(&filter).format_timestamp(None).init();
}

fn load_model(path: &Path) -> Result<EnsembleModel> {
    EnsembleModel::load(path).with_context(|| format!("cannot load model {}", path.display()))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = ennopt_core::model::to_json_full_precision(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn run_optimize(a: OptimizeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let instance =
        a.instance.unwrap_or_else(|| a.model.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned()));
    let cfg = RunConfig {
        mode: match a.mode {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::TwoPhase => Mode::TwoPhase,
        },
        phase1_limit: a.phase1_limit.min(a.time_limit),
        total_limit: a.time_limit,
        tighten: TightenParams { k: a.k, tau: a.tau, threads: a.common.threads, ..TightenParams::default() },
        phase2: Phase2Params {
            delta: a.delta,
            epsilon: a.epsilon,
            mu0: a.mu0,
            q_init: a.q,
            threads: a.common.threads,
            ..Phase2Params::default()
        },
        seed: a.common.seed,
        threads: a.common.threads,
        instance,
    };
    let report = optimize(&model, &cfg)?;
    report.save(&a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    if let Some(csv) = &a.csv {
        std::fs::write(csv, format!("{REPORT_CSV_HEADER}\n{}\n", report.csv_row()))
            .with_context(|| format!("cannot write {}", csv.display()))?;
    }
    println!(
        "objective {:.9} (unscaled {:.9}) bound {:.9} gap {:.4}% in {:.2}s",
        report.objective,
        report.objective_unscaled,
        report.bound,
        100.0 * report.gap,
        report.times.total
    );
    Ok(())
}

fn run_report(pattern: &str, out: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for entry in glob::glob(pattern).with_context(|| format!("bad glob pattern '{pattern}'"))? {
        let path = entry?;
        let r = RunReport::load(&path).with_context(|| format!("cannot read report {}", path.display()))?;
        rows.push(r);
    }
    if rows.is_empty() {
        bail!("no reports match '{pattern}'");
    }
    let mut w = String::from("instance,e,L,time,solved,gap,time-gap\n");
    for r in &rows {
        w.push_str(&format!(
            "{},{},{},{:.2},{},{:.4},{:.2}\n",
            r.instance.name,
            r.instance.e,
            r.instance.depth,
            r.times.total,
            r.solved,
            100.0 * r.gap,
            r.time_gap
        ));
    }
    std::fs::write(out, w).with_context(|| format!("cannot write {}", out.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample { function, method, n, out, common } => {
            let f = BenchmarkFn::from_name(&function)?;
            let n = n.unwrap_or_else(|| f.default_samples());
            if n == 0 {
                bail!("--n must be at least 1");
            }
            let data = match method {
                Method::Lhs => sample_lhs(&f, n, common.seed),
                Method::Mvn => sample_mvn(&f, n, common.seed),
            };
            data.write_csv(&out).with_context(|| format!("cannot write {}", out.display()))?;
        }
        Command::Train { data, e, layers, lr, batch_size, max_epochs, patience, sense, out, common } => {
            let ds = Dataset::read_csv(&data).with_context(|| format!("cannot read dataset {}", data.display()))?;
            let cfg = TrainConfig {
                e,
                layers,
                learning_rate: lr,
                batch_size,
                max_epochs,
                patience,
                seed: common.seed,
                sense: match sense {
                    SenseArg::Min => ObjectiveSense::Min,
                    SenseArg::Max => ObjectiveSense::Max,
                },
            };
            let model = train_ensemble(&ds, &cfg)?;
            model.save(&out).with_context(|| format!("cannot write {}", out.display()))?;
        }
        Command::Optimize(args) => run_optimize(args)?,
        Command::Oracle { model, out, common } => {
            let m = load_model(&model)?;
            let r = enumerate_patterns_exact_threads(&m, &m.domain, common.threads)?;
            let o = OracleOutput {
                x_unscaled: m.scaler.unscale_input(&r.x),
                value_unscaled: m.scaler.unscale_output(r.value),
                x: r.x,
                value: r.value,
                free_neurons: r.free_neurons,
                feasible_patterns: r.feasible_patterns,
            };
            write_json(&o, &out)?;
            println!("optimum {:.9} over {} feasible patterns", o.value, o.feasible_patterns);
        }
        Command::Report { glob, out, .. } => run_report(&glob, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            eprintln!("{} (see --help)", text.lines().next().unwrap_or("invalid arguments").trim_end());
            return ExitCode::from(2);
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
