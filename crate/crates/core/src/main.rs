use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fcmpc::harness::{self, compare, plot, Config, ControllerKind, HarnessError, RunConfig, Scenario, Trace};
use fcmpc::nn::load_weights;

/// Neural-network MPC of a PEM fuel cell: data generation, training,
/// closed-loop simulation, comparison and plots.
#[derive(Parser)]
#[command(name = "fcmpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed this stage consumes (dataset, training or
    /// measurement noise).
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory; defaults come from the `[run]` section.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample operating points and record one-step plant transitions.
    Datagen {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the network on a dataset and write the weights.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run one controller on a scenario and write the trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// nn-mpc, plant-mpc or open-loop.
        #[arg(long)]
        controller: Option<String>,
        /// Scenario file, or the built-in `step` / `ramp-step`.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Run NN-MPC and plant-MPC on the same scenario and report metrics.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Render SVG figures from trace files; several traces are overlaid.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config, HarnessError> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn resolve_scenario(cfg: &Config, arg: Option<&str>) -> Result<Scenario, HarnessError> {
    match arg {
        None => cfg.scenario(),
        Some("step") => Ok(Scenario::step()),
        Some("ramp-step") => Ok(Scenario::ramp_step()),
        Some(path) => Scenario::load(Path::new(path)),
    }
}

fn network(cfg: &Config, arg: Option<PathBuf>) -> Result<fcmpc::Network, HarnessError> {
    let path = arg.unwrap_or_else(|| cfg.run.weights.clone());
    if !path.exists() {
        return Err(HarnessError::Config(format!("weights file {} does not exist; run `fcmpc train` first", path.display())));
    }
    Ok(load_weights(&path)?.0)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Datagen { common } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.datagen.seed = s;
            }
            let out = common.out.unwrap_or_else(|| cfg.run.dataset.clone());
            let data = harness::generate_dataset(&cfg, &out)?;
            eprintln!("wrote {} records to {}", data.records.len(), out.display());
        }
        Command::Train { common, dataset } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            let dataset = dataset.unwrap_or_else(|| cfg.run.dataset.clone());
            if !dataset.exists() {
                return Err(HarnessError::Config(format!("dataset {} does not exist; run `fcmpc datagen` first", dataset.display())));
            }
            let out = common.out.unwrap_or_else(|| cfg.run.weights.clone());
            let (_, report) = harness::train_from(&cfg, &dataset, &out)?;
            eprintln!(
                "best epoch {} (validation loss {:.4e}); wrote {}",
                report.best_epoch,
                report.best_val_loss,
                out.display()
            );
        }
        Command::Simulate { common, controller, scenario, weights } => {
            let cfg = load_config(common.config.as_deref())?;
            let mut sc = resolve_scenario(&cfg, scenario.as_deref())?;
            if let Some(s) = common.seed {
                sc.seed = s;
            }
            let kind = match controller {
                Some(c) => ControllerKind::parse(&c)?,
                None => cfg.run.controller,
            };
            let net = if kind == ControllerKind::NnMpc { Some(network(&cfg, weights)?) } else { None };
            let out_dir = common.out.unwrap_or_else(|| cfg.run.output_dir.clone());
            let trace = harness::run_scenario(&RunConfig::new(&cfg, sc.clone(), kind, net))?;
            let path = Trace::default_path(&out_dir, &sc.name, kind.as_str());
            trace.save(&path)?;
            eprintln!("wrote {}", path.display());
            if let Some(msg) = &trace.meta.failure {
                return Err(HarnessError::Simulation(msg.clone()));
            }
        }
        Command::Compare { common, scenario, weights } => {
            let cfg = load_config(common.config.as_deref())?;
            let mut sc = resolve_scenario(&cfg, scenario.as_deref())?;
            if let Some(s) = common.seed {
                sc.seed = s;
            }
            let net = network(&cfg, weights)?;
            let out_dir = common.out.unwrap_or_else(|| cfg.run.output_dir.clone());
            let runs = [
                RunConfig::new(&cfg, sc.clone(), ControllerKind::NnMpc, Some(net)),
                RunConfig::new(&cfg, sc.clone(), ControllerKind::PlantMpc, None),
            ];
            // The two closed loops share nothing; run them side by side.
            let results: Vec<Result<Trace, HarnessError>> = std::thread::scope(|s| {
                let handles: Vec<_> = runs.iter().map(|r| s.spawn(move || harness::run_scenario(r))).collect();
                handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
            });
            let traces = results.into_iter().collect::<Result<Vec<_>, _>>()?;
            for t in &traces {
                t.save(&Trace::default_path(&out_dir, &sc.name, &t.meta.controller))?;
            }
            let refs: Vec<&Trace> = traces.iter().collect();
            let report = compare(&refs, &sc, cfg.mpc.p_h2_max)?;
            let report_path = out_dir.join(format!("{}_compare.json", sc.name));
            let json = serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Other(e.to_string()))?;
            std::fs::write(&report_path, json + "\n").map_err(|e| HarnessError::io(&report_path, e))?;
            print!("{}", report.to_text());
            if let Some(t) = traces.iter().find(|t| t.failed()) {
                return Err(HarnessError::Simulation(format!(
                    "{}: {}",
                    t.meta.controller,
                    t.meta.failure.as_deref().unwrap_or("failed")
                )));
            }
        }
        Command::Plot { common, traces } => {
            let cfg = load_config(common.config.as_deref())?;
            let loaded = traces.iter().map(|p| Trace::load(p)).collect::<Result<Vec<_>, _>>()?;
            let out_dir = common.out.unwrap_or_else(|| cfg.run.output_dir.clone());
            let refs: Vec<&Trace> = loaded.iter().collect();
            let reference = cfg.scenario().map(|s| s.reference).unwrap_or(cfg.mpc.reference);
            for path in plot::emit_plots(&refs, reference, cfg.mpc.p_h2_max, &out_dir)? {
                eprintln!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
