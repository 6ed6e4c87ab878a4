use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nsca_core::allocation::{MlPolicy, StrategyKind};
use nsca_core::dataset::Dataset;
use nsca_core::features::FeatureSubset;
use nsca_core::harness::{
    evaluate_model, sweep, train_model, write_sweep_csv, DatasetJob, RunMetrics, Scenario,
    ScenarioConfig, SweepAxis,
};
use nsca_gbdt::GbdtParams;

#[derive(Parser)]
#[command(name = "nsca", version, about = "Quantum channel allocation in dynamic DWDM-QKD networks")]
struct Cli {
    /// Base seed for every random stream (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Monte-Carlo labelled training set.
    GenDataset(GenArgs),
    /// Train a gradient-boosted model on a dataset.
    Train(TrainArgs),
    /// RMSE and coincident rates of a model on a labelled dataset.
    Evaluate(EvalArgs),
    /// Run strategies on one scenario and report key-rate metrics.
    Simulate(SimArgs),
    /// Repeat a scenario over values of one parameter.
    Sweep(SweepArgs),
    /// Find the PP threshold giving a target reallocation count.
    CalibratePp(CalibrateArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Dataset job TOML; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    subset: Option<FeatureSubset>,
    #[arg(long)]
    n_sets: Option<usize>,
    /// Comma-separated loads in Erlang.
    #[arg(long, value_delimiter = ',')]
    loads: Option<Vec<f64>>,
    /// Comma-separated reallocation windows in slots.
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<u32>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 40)]
    num_leaves: usize,
    #[arg(long, default_value_t = 20)]
    min_data_in_leaf: usize,
    #[arg(long, default_value_t = 100)]
    max_bin: usize,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Hold out this fraction of events for validation-based early stopping.
    #[arg(long)]
    valid_fraction: Option<f64>,
    #[arg(long, default_value_t = 50)]
    early_stopping_rounds: usize,
    /// Print normalised feature importance.
    #[arg(long)]
    importance: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario TOML; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    subset: Option<FeatureSubset>,
    /// Comma-separated: fb, pp, ml-nsca, oracle.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<StrategyKind>>,
    #[arg(long)]
    tl: Option<f64>,
    #[arg(long)]
    ts: Option<u32>,
    #[arg(long)]
    link_length: Option<f64>,
    #[arg(long)]
    qch_count: Option<usize>,
    #[arg(long)]
    n_requests: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    pp_threshold: Option<f64>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Write full metrics as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// tl, ts, link_length or qch_count.
    #[arg(long)]
    axis: SweepAxis,
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Total reallocations to match; defaults to the ML-NSCA count.
    #[arg(long)]
    target: Option<u64>,
}

fn scenario_config(a: &ScenarioArgs, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut c = match &a.config {
        Some(p) => ScenarioConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(v) = &a.topology {
        c.topology = v.clone();
    }
    if let Some(v) = &a.model {
        c.model = Some(v.clone());
    }
    if let Some(v) = a.subset {
        c.subset = v;
    }
    if let Some(v) = &a.strategies {
        c.strategies = v.clone();
    }
    if let Some(v) = a.tl {
        c.traffic.load_erlang = v;
    }
    if let Some(v) = a.ts {
        c.window = v;
    }
    if let Some(v) = a.link_length {
        c.link_length_km = Some(v);
    }
    if let Some(v) = a.qch_count {
        c.qch_count = v;
    }
    if let Some(v) = a.n_requests {
        c.n_requests = v;
    }
    if let Some(v) = a.repetitions {
        c.n_repetitions = v;
    }
    if let Some(v) = a.pp_threshold {
        c.pp_threshold_bps = Some(v);
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

fn print_metrics(m: &RunMetrics) {
    println!(
        "{:<8} mean SKR {:>10.2} bps  ±{:>8.2}  blocking {:.4}  reallocations/run {:>8.1}  suspended {}  [{:.2}s]",
        m.strategy.name(),
        m.mean_skr_bps,
        m.ci95_bps,
        m.blocking,
        m.reallocations_per_run,
        m.suspended,
        m.wall_clock_s
    );
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenDataset(a) => {
            let mut job = match &a.config {
                Some(p) => DatasetJob::load(p).with_context(|| format!("reading {}", p.display()))?,
                None => DatasetJob::default(),
            };
            if let Some(v) = a.topology {
                job.topology = v;
            }
            if let Some(v) = a.rows {
                job.rows = v;
            }
            if let Some(v) = a.subset {
                job.dataset.subset = v;
            }
            if let Some(v) = a.n_sets {
                job.dataset.n_sets = v;
            }
            if let Some(v) = a.loads {
                job.dataset.loads_erlang = v;
            }
            if let Some(v) = a.windows {
                job.dataset.windows = v;
            }
            if let Some(s) = cli.seed {
                job.dataset.seed = s;
            }
            let (data, stats) = job.run()?;
            data.write_csv(&a.out)?;
            println!(
                "wrote {} rows ({} events, {} episodes, {} events without a free channel) to {}",
                data.len(),
                stats.events,
                stats.episodes,
                stats.skipped_events,
                a.out.display()
            );
        }
        Command::Train(a) => {
            let data = Dataset::read_csv(&a.data)?;
            let params = GbdtParams {
                learning_rate: a.learning_rate,
                n_iterations: a.iterations,
                num_leaves: a.num_leaves,
                min_data_in_leaf: a.min_data_in_leaf,
                max_bin: a.max_bin,
                max_depth: a.max_depth,
                early_stopping_rounds: a.valid_fraction.map(|_| a.early_stopping_rounds),
                seed: cli.seed.unwrap_or(0),
            };
            let (model, report) = match a.valid_fraction {
                Some(f) => {
                    let (train, valid) = data.split_events(f, params.seed);
                    let (m, r) = nsca_gbdt::train_with_validation(&train.to_train_set()?, &valid.to_train_set()?, &params)?;
                    (m.with_fingerprint(data.schema.fingerprint()), r)
                }
                None => train_model(&data, &params)?,
            };
            nsca_gbdt::io::save(&model, &a.out)?;
            println!(
                "trained {} trees on {} rows; training RMSE {:.5}{}",
                model.trees().len(),
                data.len(),
                report.train_rmse.last().copied().unwrap_or(f64::NAN),
                report
                    .valid_rmse
                    .last()
                    .map(|v| format!(", validation RMSE {v:.5} (best iteration {:?})", report.best_iteration))
                    .unwrap_or_default()
            );
            if a.importance {
                for (name, v) in data.schema.names.iter().zip(model.feature_importance()) {
                    println!("{name:>16} {v:.4}");
                }
            }
        }
        Command::Evaluate(a) => {
            let data = Dataset::read_csv(&a.data)?;
            let model = nsca_gbdt::io::load(&a.model)?;
            let e = evaluate_model(&model, &data)?;
            if a.json {
                println!("{}", serde_json::to_string_pretty(&e)?);
            } else {
                println!("rows {}  events {}  RMSE {:.5}  coincident {:.4}", e.rows, e.events, e.rmse, e.coincident_rate());
                for (i, g) in e.groups.iter().enumerate() {
                    println!("group {}: {:>7} events  coincident {:.4}", i + 1, g.events, g.rate());
                }
            }
        }
        Command::Simulate(a) => {
            let scenario = Scenario::from_config(scenario_config(&a.scenario, cli.seed)?)?;
            let results = scenario.compare()?;
            for (m, cal) in &results {
                print_metrics(m);
                if let Some(c) = cal {
                    println!(
                        "         pp threshold {:.3} bps ({} reallocations, {} iterations{})",
                        c.threshold_bps,
                        c.count,
                        c.iterations,
                        if c.converged { "" } else { ", target not reached" }
                    );
                }
            }
            if let Some(out) = a.out {
                let metrics: Vec<&RunMetrics> = results.iter().map(|(m, _)| m).collect();
                std::fs::write(&out, serde_json::to_string_pretty(&metrics)?)?;
            }
        }
        Command::Sweep(a) => {
            let cfg = scenario_config(&a.scenario, cli.seed)?;
            let policy = match &cfg.model {
                Some(p) => Some(MlPolicy::new(Arc::new(nsca_gbdt::io::load(p)?), cfg.subset)),
                None => None,
            };
            let rows = sweep(&cfg, policy, a.axis, &a.values)?;
            match a.out {
                Some(p) => write_sweep_csv(BufWriter::new(File::create(&p)?), &rows)?,
                None => write_sweep_csv(std::io::stdout().lock(), &rows)?,
            }
        }
        Command::CalibratePp(a) => {
            let scenario = Scenario::from_config(scenario_config(&a.scenario, cli.seed)?)?;
            let target = match a.target {
                Some(t) => t,
                None => {
                    if scenario.policy.is_none() {
                        bail!("either --target or --model is required");
                    }
                    let ml = scenario.run(&scenario.strategy(StrategyKind::MlNsca, None)?)?;
                    println!("ml-nsca reallocations: {}", ml.total_reallocations);
                    ml.total_reallocations
                }
            };
            let c = scenario.calibrate_pp(target)?;
            let mut out = std::io::stdout().lock();
            writeln!(
                out,
                "threshold {:.6} bps  count {}  target {}  iterations {}  converged {}",
                c.threshold_bps, c.count, target, c.iterations, c.converged
            )?;
        }
    }
    Ok(())
}
