//! Closed-loop scenarios, traces, controller comparison and plots.

pub mod compare;
pub mod config;
pub mod plot;
pub mod scenario;
pub mod trace;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::datagen::{self, Dataset, DatagenError};
use crate::mpc::{self, ControllerState, MpcError, StepDecision};
use crate::nn::{self, Network, NnError, TrainReport};
use crate::plant::{self, Plant, PlantInputs};
use crate::qp::QpStatus;

pub use compare::{compare, metrics, ComparisonReport, Metrics};
pub use config::{Config, ControllerKind, RunConfig};
pub use scenario::Scenario;
pub use trace::{Trace, TraceMeta, TraceRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Training(String),
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Other(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }

    /// Process exit code: 2 configuration, 3 training divergence,
    /// 4 simulation failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Training(_) => 3,
            HarnessError::Simulation(_) => 4,
            HarnessError::Io { .. } | HarnessError::Other(_) => 1,
        }
    }
}

impl From<DatagenError> for HarnessError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::Io { path, source } => HarnessError::Io { path: path.display().to_string(), source },
            DatagenError::Bounds(_) => HarnessError::Config(e.to_string()),
            other => HarnessError::Other(other.to_string()),
        }
    }
}

impl From<NnError> for HarnessError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Diverged { .. } => HarnessError::Training(e.to_string()),
            NnError::Config(_) => HarnessError::Config(e.to_string()),
            NnError::Load { .. } => HarnessError::Config(e.to_string()),
            NnError::Io { path, source } => HarnessError::Io { path, source },
        }
    }
}

fn status_label(d: &StepDecision) -> String {
    if d.degraded {
        format!("degraded:{}", d.status.as_str())
    } else {
        QpStatus::Solved.as_str().to_string()
    }
}

/// Closed loop at the controller sampling time: measure, decide, apply for
/// one interval, repeat. The current is known exactly; voltage and
/// pressure are measured with noise from the scenario's seeded stream.
///
/// A plant or controller failure ends the run early; the trace then
/// carries a final `failed` row and `meta.failure` is set.
pub fn run_scenario(cfg: &RunConfig) -> Result<Trace, HarnessError> {
    run_scenario_observed(cfg, |_, _| {})
}

/// [`run_scenario`] that also hands every controller decision to
/// `observe` along with its step index.
pub fn run_scenario_observed(
    cfg: &RunConfig,
    mut observe: impl FnMut(usize, &StepDecision),
) -> Result<Trace, HarnessError> {
    cfg.validate()?;
    let sc = &cfg.scenario;
    let dt = cfg.mpc.dt;
    let mut mpc_cfg = cfg.mpc.clone();
    mpc_cfg.reference = sc.reference;

    let mut meta = TraceMeta::new(&sc.name, cfg.controller.as_str(), dt);
    meta.config_hash = cfg.config_hash.clone();
    meta.scenario_seed = sc.seed;
    meta.datagen_seed = cfg.datagen_seed;
    meta.train_seed = cfg.train_seed;

    let i0 = sc.current(0.0);
    let [q0_h2, q0_air] = sc.initial_flows;
    let start = plant::settled_state(&cfg.plant, &PlantInputs::new(q0_h2, q0_air, i0))
        .map_err(|e| HarnessError::Simulation(format!("initial equilibrium: {e}")))?;
    let mut plant = Plant::new(cfg.plant.clone(), start).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut ctrl = ControllerState::new(sc.initial_flows, &mpc_cfg).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);

    let n = sc.rows(dt);
    let mut rows = Vec::with_capacity(n);
    let mut prev_current = i0;
    for k in 0..n {
        let t = k as f64 * dt;
        let current = sc.current(t);
        let step = (|| -> Result<TraceRow, String> {
            let (v_true, p_true) = plant.output(current).map_err(|e| e.to_string())?;
            let meas = plant::measure((v_true, p_true), &sc.noise_std, &mut rng);
            let decision = match cfg.controller {
                ControllerKind::NnMpc => {
                    let net = cfg.network.as_ref().expect("validated");
                    mpc::control_step(&mut ctrl, &meas, current, prev_current, net, &mpc_cfg)
                }
                ControllerKind::PlantMpc => mpc::baseline_plant_mpc_step(
                    &mut ctrl,
                    &meas,
                    current,
                    prev_current,
                    &plant.state,
                    &plant.params,
                    &mpc_cfg,
                ),
                ControllerKind::OpenLoop => Ok(hold(&mut ctrl)),
            }
            .map_err(|e: MpcError| e.to_string())?;
            if let Some(a) = &decision.anomaly {
                meta.anomalies.push((k, a.clone()));
            }
            observe(k, &decision);
            Ok(TraceRow {
                t,
                current,
                v_true,
                v_meas: meas.v_fc,
                p_true,
                p_meas: meas.p_h2,
                q_h2: decision.flows[0],
                q_air: decision.flows[1],
                dq_h2: decision.increment[0],
                dq_air: decision.increment[1],
                slack: decision.slack_max(),
                status: if cfg.controller == ControllerKind::OpenLoop { "open-loop".into() } else { status_label(&decision) },
                iters: decision.iterations,
                ms: if cfg.record_timing { decision.solve_time.as_secs_f64() * 1e3 } else { 0.0 },
            })
        })();
        let row = match step {
            Ok(r) => r,
            Err(msg) => {
                fail(&mut rows, t, current, &ctrl, &mut meta, format!("t = {t}: {msg}"));
                break;
            }
        };
        let inputs = PlantInputs::new(row.q_h2, row.q_air, current);
        rows.push(row);
        prev_current = current;
        if k + 1 < n {
            if let Err(e) = plant.advance(&inputs, dt) {
                fail(&mut rows, t + dt, sc.current(t + dt), &ctrl, &mut meta, format!("t = {t}: plant step: {e}"));
                break;
            }
        }
    }
    meta.rows = rows.len();
    Ok(Trace { rows, meta })
}

fn hold(ctrl: &mut ControllerState) -> StepDecision {
    use crate::autodiff::Jacobian;
    use crate::ssm::{StateSpaceModel, StateVec};
    ctrl.step += 1;
    ctrl.last_increment = [0.0; 2];
    StepDecision {
        flows: ctrl.flows,
        increment: [0.0; 2],
        predicted: Vec::new(),
        slack: Vec::new(),
        status: QpStatus::Solved,
        iterations: 0,
        solve_time: Default::default(),
        degraded: false,
        anomaly: None,
        jacobian: Jacobian::ZERO,
        model: StateSpaceModel::assemble(&Jacobian::ZERO),
        x_init: StateVec::zeros(),
        u_prev: [0.0; 2],
    }
}

fn fail(rows: &mut Vec<TraceRow>, t: f64, current: f64, ctrl: &ControllerState, meta: &mut TraceMeta, msg: String) {
    rows.push(TraceRow {
        t,
        current,
        v_true: f64::NAN,
        v_meas: f64::NAN,
        p_true: f64::NAN,
        p_meas: f64::NAN,
        q_h2: ctrl.flows[0],
        q_air: ctrl.flows[1],
        dq_h2: 0.0,
        dq_air: 0.0,
        slack: 0.0,
        status: "failed".into(),
        iters: 0,
        ms: 0.0,
    });
    meta.failure = Some(msg);
}

/// Files and results of a full `datagen → train → simulate` run.
#[derive(Debug)]
pub struct PipelineOutput {
    pub dataset: PathBuf,
    pub weights: PathBuf,
    pub train_report: TrainReport,
    pub network: Network,
    pub traces: Vec<(PathBuf, Trace)>,
}

pub fn generate_dataset(config: &Config, out: &Path) -> Result<Dataset, HarnessError> {
    let dataset = datagen::generate(&config.plant, &config.datagen)?;
    dataset.save(out)?;
    Ok(dataset)
}

/// Train on a dataset file and save the weights with provenance metadata.
pub fn train_from(config: &Config, dataset_path: &Path, out: &Path) -> Result<(Network, TrainReport), HarnessError> {
    let dataset = Dataset::load(dataset_path)?;
    let (network, report) = nn::train(&dataset.records, &config.train)?;
    let mut meta = serde_json::Map::new();
    meta.insert("dataset".into(), dataset_path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default().into());
    meta.insert("dataset_seed".into(), dataset.meta.seed.into());
    meta.insert("train_seed".into(), config.train.seed.into());
    meta.insert("best_epoch".into(), report.best_epoch.into());
    meta.insert("best_val_loss".into(), serde_json::Number::from_f64(report.best_val_loss).map_or(serde_json::Value::Null, Into::into));
    meta.insert("generator".into(), datagen::generator_id().into());
    nn::save_weights(&network, meta, out)?;
    Ok((network, report))
}

/// Simulate each controller on the scenario and write `<scenario>_<controller>.csv`
/// into `out_dir`.
pub fn simulate_all(
    config: &Config,
    scenario: &Scenario,
    controllers: &[ControllerKind],
    network: Option<&Network>,
    out_dir: &Path,
) -> Result<Vec<(PathBuf, Trace)>, HarnessError> {
    let mut out = Vec::new();
    for &kind in controllers {
        let net = if kind == ControllerKind::NnMpc { network.cloned() } else { None };
        let trace = run_scenario(&RunConfig::new(config, scenario.clone(), kind, net))?;
        let path = Trace::default_path(out_dir, &scenario.name, kind.as_str());
        trace.save(&path)?;
        out.push((path, trace));
    }
    Ok(out)
}

/// Whole pipeline into `out_dir`: dataset, weights, and NN-MPC and
/// plant-MPC traces for every scenario.
pub fn pipeline(config: &Config, scenarios: &[Scenario], out_dir: &Path) -> Result<PipelineOutput, HarnessError> {
    let dataset = out_dir.join("dataset.csv");
    let weights = out_dir.join("weights.json");
    generate_dataset(config, &dataset)?;
    let (network, train_report) = train_from(config, &dataset, &weights)?;
    let mut traces = Vec::new();
    for sc in scenarios {
        traces.extend(simulate_all(config, sc, &[ControllerKind::NnMpc, ControllerKind::PlantMpc], Some(&network), out_dir)?);
    }
    Ok(PipelineOutput { dataset, weights, train_report, network, traces })
}
