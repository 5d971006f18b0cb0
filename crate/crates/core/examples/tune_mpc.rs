//! Closed-loop sensitivity of the controller tunables.
//!
//! ```text
//! cargo run --release --example tune_mpc -- --weights out/weights.json --rho 1e7
//! ```
//!
//! Runs plant-MPC (and NN-MPC when weights are given or `--train` is set)
//! on both built-in scenarios and prints the comparison metrics plus a
//! slack audit: the largest reported slack at steps where the hard-bounded
//! problem is feasible.

use std::path::PathBuf;

use clap::Parser;
use fcmpc::harness::{self, compare, Config, ControllerKind, RunConfig, Scenario};
use fcmpc::mpc::build_qp_hard;
use fcmpc::nn::{self, load_weights};
use fcmpc::qp::{self, QpStatus};

#[derive(Parser)]
struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Generate data and train a network in memory first.
    #[arg(long)]
    train: bool,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    r_h2: Option<f64>,
    #[arg(long)]
    r_air: Option<f64>,
    #[arg(long)]
    hp: Option<usize>,
    #[arg(long)]
    hu: Option<usize>,
    #[arg(long)]
    exact_a: bool,
    #[arg(long)]
    noiseless: bool,
    /// Write the traces here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args = Args::parse();
    let mut cfg = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(v) = args.rho {
        cfg.mpc.rho = v;
    }
    if let Some(v) = args.q {
        cfg.mpc.q_weight = v;
    }
    if let Some(v) = args.r {
        cfg.mpc.r_weight = [v, v];
    }
    if let Some(v) = args.r_h2 {
        cfg.mpc.r_weight[0] = v;
    }
    if let Some(v) = args.r_air {
        cfg.mpc.r_weight[1] = v;
    }
    if let Some(v) = args.hp {
        cfg.mpc.h_p = v;
    }
    if let Some(v) = args.hu {
        cfg.mpc.h_u = v;
    }
    cfg.mpc.exact_state_partials = args.exact_a;
    cfg.validate()?;

    let network = if let Some(p) = &args.weights {
        Some(load_weights(p)?.0)
    } else if args.train {
        let data = fcmpc::datagen::generate(&cfg.plant, &cfg.datagen)?;
        let (net, report) = nn::train(&data.records, &cfg.train)?;
        println!("trained: best epoch {} val loss {:.3e}", report.best_epoch, report.best_val_loss);
        let (_, val) = fcmpc::datagen::split(&data.records, cfg.train.val_fraction, cfg.train.seed);
        let mean = val.iter().map(|r| r.x_next[0]).sum::<f64>() / val.len() as f64;
        let rmse = |f: &dyn Fn(&fcmpc::Record) -> f64| {
            (val.iter().map(|r| (f(r) - r.x_next[0]).powi(2)).sum::<f64>() / val.len() as f64).sqrt()
        };
        println!(
            "validation voltage RMSE {:.4} V, predict-the-mean RMSE {:.4} V, hold-last RMSE {:.4} V",
            rmse(&|r| net.forward(&r.input())[0]),
            rmse(&|_| mean),
            rmse(&|r| r.x[0])
        );
        Some(net)
    } else {
        None
    };

    for mut sc in [Scenario::step(), Scenario::ramp_step()] {
        if args.noiseless {
            sc.noise_std = fcmpc::plant::NoiseStd::ZERO;
        }
        let mut kinds = vec![ControllerKind::PlantMpc];
        if network.is_some() {
            kinds.insert(0, ControllerKind::NnMpc);
        }
        let mut traces = Vec::new();
        for kind in kinds {
            let run = RunConfig::new(&cfg, sc.clone(), kind, network.clone());
            let mut audit: f64 = 0.0;
            let mut max_slack: f64 = 0.0;
            let started = std::time::Instant::now();
            let trace = harness::run_scenario_observed(&run, |_, d| {
                max_slack = max_slack.max(d.slack_max());
                let hard = build_qp_hard(&d.model, &run.mpc, &d.x_init, &d.u_prev);
                if let Ok(sol) = qp::solve(&hard, &run.mpc.qp) {
                    if sol.status == QpStatus::Solved {
                        audit = audit.max(d.slack_max());
                    }
                }
            })?;
            println!(
                "{} {}: {:.2}s, max slack {:.2e}, max slack where hard-feasible {:.2e}, anomalies {}",
                sc.name,
                kind.as_str(),
                started.elapsed().as_secs_f64(),
                max_slack,
                audit,
                trace.meta.anomalies.len()
            );
            if let Some(dir) = &args.dump {
                trace.save(&harness::Trace::default_path(dir, &sc.name, kind.as_str()))?;
            }
            traces.push(trace);
        }
        let refs: Vec<_> = traces.iter().collect();
        print!("{}", compare(&refs, &sc, cfg.mpc.p_h2_max)?.to_text());
    }
    Ok(())
}
