//! Acceptance run: one PASS/FAIL line per criterion. Tolerances and time
//! budgets are pinned below; the process exits non-zero if any check fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{enumerate_qp, fd_jacobian_scaled, fd_loss_gradient, forward_oracle, kkt_residuals, random_qp};
use fcmpc::autodiff::{col, row};
use fcmpc::datagen::{self, lhs_sample, Dataset, SampleBounds};
use fcmpc::harness::{self, metrics, Config, ControllerKind, PipelineOutput, RunConfig, Scenario, Trace};
use fcmpc::mpc::build_qp_hard;
use fcmpc::nn::{self, NetworkWeights, Scaler, ARCHITECTURE};
use fcmpc::ssm::idx;
use fcmpc::{jacobian, qp, Jacobian, Network, QpSettings, QpStatus, Record, StateSpaceModel};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SSM_CASES: usize = 1000;
const SSM_BUDGET: Duration = Duration::from_secs(1);
const AD_POINTS: usize = 100;
const AD_TOL: f64 = 1e-5;
const AD_KINK_MARGIN: f64 = 1e-4;
const AD_BUDGET: Duration = Duration::from_secs(5);
const GRAD_TOL: f64 = 1e-5;
const GRAD_FLOOR: f64 = 1e-8;
const GRAD_BUDGET: Duration = Duration::from_secs(5);
const QP_CASES: usize = 200;
const QP_REL_TOL: f64 = 1e-6;
const KKT_TOL: f64 = 1e-6;
const QP_BUDGET: Duration = Duration::from_secs(30);
const LHS_SIZES: [usize; 3] = [4, 100, 2000];
const LHS_BUDGET: Duration = Duration::from_secs(1);
const TRAIN_RECORDS: usize = 2000;
const RMSE_NOISE_MULTIPLE: f64 = 2.0;
const MEAN_MSE_RATIO: f64 = 100.0;
const TRAIN_BUDGET: Duration = Duration::from_secs(300);
const RUN_BUDGET: Duration = Duration::from_secs(60);
const DQ_BOUNDS: (f64, f64) = (-40.0, 20.0);
const Q_H2_BOUNDS: (f64, f64) = (100.0, 400.0);
const Q_AIR_BOUNDS: (f64, f64) = (300.0, 700.0);
const SETTLE_WITHIN: f64 = 60.0;
const STEADY_BAND: f64 = 0.2;
const P_LIMIT: f64 = 2.5;
const NN_EXCEEDANCE: f64 = 0.05;
const NN_EXCEEDANCE_TIME: f64 = 2.0;
const SLACK_SAMPLES: usize = 20;
const SLACK_TOL: f64 = 1e-4;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(budget: Duration, start: Instant) -> (bool, String) {
    let took = start.elapsed();
    (took <= budget, format!("{:.2} s of {} s", took.as_secs_f64(), budget.as_secs()))
}

// ---------------------------------------------------------------- 1

fn random_jacobian(rng: &mut ChaCha8Rng) -> Jacobian {
    let mut j = [[0.0; 5]; 2];
    for r in j.iter_mut() {
        for v in r.iter_mut() {
            *v = rng.random_range(-10.0..10.0);
        }
    }
    Jacobian(j)
}

/// Expected `(A, B, C)` written out entry by entry.
fn expected_model(j: &Jacobian) -> ([[f64; 5]; 5], [[f64; 2]; 5], [f64; 5]) {
    let mut a = [[0.0; 5]; 5];
    let mut b = [[0.0; 2]; 5];
    for s in [idx::V, idx::P, idx::Q_H2, idx::Q_AIR] {
        a[s][s] = 1.0;
    }
    a[idx::V][idx::DI] = j.0[row::V][col::CURRENT];
    a[idx::P][idx::DI] = j.0[row::P][col::CURRENT];
    b[idx::V] = [j.0[row::V][col::Q_H2], j.0[row::V][col::Q_AIR]];
    b[idx::P] = [j.0[row::P][col::Q_H2], j.0[row::P][col::Q_AIR]];
    b[idx::Q_H2][0] = 1.0;
    b[idx::Q_AIR][1] = 1.0;
    let mut c = [0.0; 5];
    c[idx::V] = 1.0;
    (a, b, c)
}

fn structural_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let jacs: Vec<Jacobian> = (0..SSM_CASES).map(|_| random_jacobian(&mut rng)).collect();
    let start = Instant::now();
    let models: Vec<StateSpaceModel> = jacs.iter().map(StateSpaceModel::assemble).collect();
    let (fast, time) = within(SSM_BUDGET, start);
    let mut bad = 0;
    for (j, m) in jacs.iter().zip(&models) {
        let (a, b, c) = expected_model(j);
        let exact = (0..5).all(|r| (0..5).all(|k| m.a[(r, k)] == a[r][k]) && (0..2).all(|k| m.b[(r, k)] == b[r][k]) && m.c[(0, r)] == c[r]);
        if !exact || !m.has_standard_structure() {
            bad += 1;
        }
    }
    check(bad == 0 && fast, format!("{bad}/{SSM_CASES} mismatched models, {time}"))
}

// ---------------------------------------------------------------- 2, 3

fn random_scaler(rng: &mut ChaCha8Rng) -> Scaler {
    Scaler {
        input_shift: vec![250.0, 500.0, 120.0, 48.0, 1.9],
        input_scale: (0..5).map(|_| rng.random_range(0.5..80.0)).collect(),
        output_shift: vec![48.0, 1.9],
        output_scale: vec![rng.random_range(0.5..3.0), rng.random_range(0.05..0.5)],
    }
}

fn random_network(rng: &mut ChaCha8Rng, widths: &[usize]) -> NetworkWeights {
    let mut w = NetworkWeights::he_uniform(widths, rng);
    for l in &mut w.layers {
        l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
    }
    w
}

fn random_input(rng: &mut ChaCha8Rng) -> [f64; 5] {
    [
        rng.random_range(100.0..400.0),
        rng.random_range(300.0..700.0),
        rng.random_range(60.0..180.0),
        rng.random_range(44.0..52.0),
        rng.random_range(1.0..2.6),
    ]
}

/// Largest scaled-space gap between the dual-number Jacobian and central
/// differences at one point.
fn ad_gap(net: &Network, x: &[f64; 5]) -> f64 {
    let s = &net.scaler;
    let phys = jacobian(net, x);
    let fd = fd_jacobian_scaled(&net.weights, &s.scale_input(&x[..]), 1e-7);
    let mut worst = 0.0f64;
    for r in 0..2 {
        for c in 0..5 {
            let scaled = phys.get(r, c) * s.input_scale[c] / s.output_scale[r];
            worst = worst.max((scaled - fd[r][c]).abs());
        }
    }
    worst
}

fn ad_correctness(trained: &Network) -> Outcome {
    // Half the points on the trained model, half on random networks.
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let start = Instant::now();
    let (mut points, mut worst) = (0, 0.0f64);
    while points < AD_POINTS / 2 {
        let x = random_input(&mut rng);
        if forward_oracle(&trained.weights, &trained.scaler, &x).1 >= AD_KINK_MARGIN {
            worst = worst.max(ad_gap(trained, &x));
            points += 1;
        }
    }
    while points < AD_POINTS {
        let net = Network::new(random_network(&mut rng, &ARCHITECTURE), random_scaler(&mut rng)).expect("valid network");
        let x = random_input(&mut rng);
        if forward_oracle(&net.weights, &net.scaler, &x).1 >= AD_KINK_MARGIN {
            worst = worst.max(ad_gap(&net, &x));
            points += 1;
        }
    }
    let (fast, time) = within(AD_BUDGET, start);
    check(worst <= AD_TOL && fast, format!("max |AD - FD| = {worst:.2e} over {points} points, {time}"))
}

fn random_record(rng: &mut ChaCha8Rng) -> Record {
    let x = random_input(rng);
    Record { u: [x[0], x[1], x[2]], x: [x[3], x[4]], x_next: [rng.random_range(44.0..52.0), rng.random_range(1.0..2.6)] }
}

/// Scaler with spreads near those of the training data. Scaled inputs of
/// order one keep the loss small enough that central differences are not
/// swamped by cancellation (with `input_scale` 0.5 on a 300 lpm flow the
/// loss reaches ~1e6 and the difference quotient loses four digits).
fn fitted_like_scaler(rng: &mut ChaCha8Rng) -> Scaler {
    let spread = [86.0, 115.0, 35.0, 2.3, 0.46, 2.3, 0.46];
    let mut f = || rng.random_range(0.5..2.0);
    Scaler {
        input_shift: vec![250.0, 500.0, 120.0, 48.0, 1.9],
        input_scale: spread[..5].iter().map(|s| s * f()).collect(),
        output_shift: vec![48.0, 1.9],
        output_scale: spread[5..].iter().map(|s| s * f()).collect(),
    }
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let start = Instant::now();
    let (mut checked, mut worst, mut at, mut stray) = (0usize, 0.0f64, 0.0f64, 0usize);
    for _ in 0..20 {
        let w = random_network(&mut rng, &[5, 3, 2]);
        let s = fitted_like_scaler(&mut rng);
        let batch: Vec<Record> =
            (0..400).map(|_| random_record(&mut rng)).filter(|r| forward_oracle(&w, &s, &r.input()).1 > 1e-3).take(16).collect();
        let grad = nn::backward(&w, &s, &batch);
        let fd = fd_loss_gradient(&w, &s, &batch, 1e-6);
        for (gl, fl) in grad.layers.iter().zip(&fd.layers) {
            for (g, f) in gl.weights.iter().chain(&gl.bias).zip(fl.weights.iter().chain(&fl.bias)) {
                if f.abs() > GRAD_FLOOR {
                    checked += 1;
                    let rel = (g - f).abs() / f.abs();
                    if rel > worst {
                        (worst, at) = (rel, *f);
                    }
                } else if g.abs() > 10.0 * GRAD_FLOOR {
                    stray += 1;
                }
            }
        }
    }
    let (fast, time) = within(GRAD_BUDGET, start);
    check(
        worst <= GRAD_TOL && stray == 0 && checked > 0 && fast,
        format!("max relative error {worst:.2e} (at |grad| {:.1e}) over {checked} parameters, {stray} nonzero where FD vanishes, {time}", at.abs()),
    )
}

// ---------------------------------------------------------------- 4

fn qp_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let settings = QpSettings::default();
    let start = Instant::now();
    let (mut worst_rel, mut worst_kkt, mut unsolved, mut infeasible_oracle) = (0.0f64, 0.0f64, 0, 0);
    for _ in 0..QP_CASES {
        let p = random_qp(&mut rng, 10, 12);
        let sol = match qp::solve(&p, &settings) {
            Ok(s) => s,
            Err(_) => {
                unsolved += 1;
                continue;
            }
        };
        if sol.status != QpStatus::Solved {
            unsolved += 1;
            continue;
        }
        let [stat, primal, comp, sign] = kkt_residuals(&p, &sol.z, &sol.lambda);
        worst_kkt = worst_kkt.max(stat).max(primal).max(comp).max(sign);
        match enumerate_qp(&p) {
            Some((f_ref, _)) => worst_rel = worst_rel.max((sol.objective - f_ref).abs() / f_ref.abs().max(1.0)),
            None => infeasible_oracle += 1,
        }
    }
    let (fast, time) = within(QP_BUDGET, start);
    check(
        worst_rel <= QP_REL_TOL && worst_kkt <= KKT_TOL && unsolved == 0 && infeasible_oracle == 0 && fast,
        format!("{QP_CASES} problems: max objective gap {worst_rel:.2e}, max KKT residual {worst_kkt:.2e}, {unsolved} unsolved, {time}"),
    )
}

// ---------------------------------------------------------------- 5

fn stratified(points: &[[f64; 3]], bounds: &SampleBounds) -> bool {
    let n = points.len();
    bounds.dims().iter().enumerate().all(|(d, &(lo, hi))| {
        let mut hits = vec![0usize; n];
        for p in points {
            if !(lo..=hi).contains(&p[d]) {
                return false;
            }
            let k = (((p[d] - lo) / (hi - lo)) * n as f64).floor() as usize;
            hits[k.min(n - 1)] += 1;
        }
        hits.iter().all(|&h| h == 1)
    })
}

fn lhs_property() -> Outcome {
    let bounds = SampleBounds::default();
    let start = Instant::now();
    let mut bad = Vec::new();
    for &n in &LHS_SIZES {
        for seed in 0..5 {
            let pts = lhs_sample(n, &bounds, &mut ChaCha8Rng::seed_from_u64(seed));
            if pts.len() != n || !stratified(&pts, &bounds) {
                bad.push((n, seed));
            }
        }
    }
    let (fast, time) = within(LHS_BUDGET, start);
    check(bad.is_empty() && fast, format!("n in {LHS_SIZES:?} x 5 seeds, failures {bad:?}, {time}"))
}

// ---------------------------------------------------------------- 6

fn model_quality(config: &Config, run: &PipelineOutput, train_time: Duration) -> Outcome {
    let data = Dataset::load(&run.dataset).map_err(|e| e.to_string())?;
    let (train_set, val_set) = datagen::split(&data.records, config.train.val_fraction, config.train.seed);
    let mean = train_set.iter().map(|r| r.x_next[0]).sum::<f64>() / train_set.len() as f64;
    let n = val_set.len() as f64;
    let mse = val_set.iter().map(|r| (run.network.forward(&r.input())[0] - r.x_next[0]).powi(2)).sum::<f64>() / n;
    let mse_mean = val_set.iter().map(|r| (mean - r.x_next[0]).powi(2)).sum::<f64>() / n;
    let rmse = mse.sqrt();
    let limit = RMSE_NOISE_MULTIPLE * config.datagen.effective_noise().voltage;
    // "100x better" is read on the squared error: the RMSE cannot drop
    // below the injected noise, which caps the RMSE ratio near 30.
    let ratio = mse_mean / mse;
    let fast = train_time <= TRAIN_BUDGET;
    check(
        data.records.len() == TRAIN_RECORDS && rmse <= limit && ratio >= MEAN_MSE_RATIO && fast,
        format!(
            "{} records, val V RMSE {rmse:.4} (limit {limit}), MSE vs predict-the-mean {ratio:.0}x (RMSE ratio {:.1}x), whole pipeline {:.1} s",
            data.records.len(),
            (mse_mean / mse).sqrt(),
            train_time.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 7-10

struct Run {
    scenario: Scenario,
    trace: Trace,
    elapsed: Duration,
    /// `(step, reported slack, hard re-solve status)` at the sampled steps.
    audit: Vec<(usize, f64, QpStatus)>,
}

fn run_with_audit(config: &Config, scenario: &Scenario, kind: ControllerKind, net: &Network, seed: u64) -> Result<Run, String> {
    let cfg = RunConfig::new(config, scenario.clone(), kind, (kind == ControllerKind::NnMpc).then(|| net.clone()));
    let mut mpc_cfg = cfg.mpc.clone();
    mpc_cfg.reference = scenario.reference;
    let n = scenario.rows(cfg.mpc.dt);
    let picks: Vec<usize> = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, SLACK_SAMPLES.min(n)).into_vec();
    let mut audit = Vec::new();
    let start = Instant::now();
    let trace = harness::run_scenario_observed(&cfg, |k, d| {
        if picks.contains(&k) {
            let hard = build_qp_hard(&d.model, &mpc_cfg, &d.x_init, &d.u_prev);
            let status = qp::solve(&hard, &mpc_cfg.qp).map(|s| s.status).unwrap_or(QpStatus::Infeasible);
            audit.push((k, d.slack_max(), status));
        }
    })
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if let Some(f) = &trace.meta.failure {
        return Err(format!("{}/{}: {f}", scenario.name, kind.as_str()));
    }
    Ok(Run { scenario: scenario.clone(), trace, elapsed, audit })
}

fn hard_constraints(runs: &[Run]) -> Outcome {
    let mut violations = 0;
    let mut rows = 0;
    let mut slowest = Duration::ZERO;
    for r in runs {
        slowest = slowest.max(r.elapsed);
        for x in &r.trace.rows {
            rows += 1;
            let ok = (DQ_BOUNDS.0..=DQ_BOUNDS.1).contains(&x.dq_h2)
                && (DQ_BOUNDS.0..=DQ_BOUNDS.1).contains(&x.dq_air)
                && (Q_H2_BOUNDS.0..=Q_H2_BOUNDS.1).contains(&x.q_h2)
                && (Q_AIR_BOUNDS.0..=Q_AIR_BOUNDS.1).contains(&x.q_air);
            violations += usize::from(!ok);
        }
    }
    check(
        violations == 0 && rows > 0 && slowest <= RUN_BUDGET,
        format!("{violations} violating rows of {rows} over {} runs, slowest run {:.2} s", runs.len(), slowest.as_secs_f64()),
    )
}

fn tracking(runs: &[Run]) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for r in runs.iter().filter(|r| r.trace.meta.controller == ControllerKind::NnMpc.as_str()) {
        let m = metrics(&r.trace, &r.scenario, P_LIMIT);
        for s in &m.settling {
            let good = matches!((s.settling_time, s.residual), (Some(t), Some(e)) if t <= SETTLE_WITHIN && e < STEADY_BAND);
            ok &= good;
            notes.push(match (s.settling_time, s.residual) {
                (Some(t), Some(e)) => format!("{}@{}s: {t:.1} s, |e| {e:.3}", r.scenario.name, s.event),
                _ => format!("{}@{}s: never settles", r.scenario.name, s.event),
            });
        }
    }
    check(ok && !notes.is_empty(), notes.join("; "))
}

fn orderings(runs: &[Run]) -> Outcome {
    let step = |kind: ControllerKind| {
        runs.iter()
            .find(|r| r.scenario.name == "step" && r.trace.meta.controller == kind.as_str())
            .map(|r| metrics(&r.trace, &r.scenario, P_LIMIT))
            .ok_or_else(|| format!("no step run for {}", kind.as_str()))
    };
    let (nn_m, plant_m) = (step(ControllerKind::NnMpc)?, step(ControllerKind::PlantMpc)?);
    let order = plant_m.startup_overshoot < nn_m.startup_overshoot;
    let plant_ok = plant_m.max_p_h2 <= P_LIMIT;
    let nn_ok = nn_m.max_exceedance <= NN_EXCEEDANCE && nn_m.longest_violation <= NN_EXCEEDANCE_TIME;
    check(
        order && plant_ok && nn_ok,
        format!(
            "overshoot plant-MPC {:.4} V vs NN-MPC {:.4} V; plant-MPC max P_H2 {:.3} atm; NN-MPC exceedance {:.3} atm for {:.1} s",
            plant_m.startup_overshoot, nn_m.startup_overshoot, plant_m.max_p_h2, nn_m.max_exceedance, nn_m.longest_violation
        ),
    )
}

fn slack_discipline(runs: &[Run]) -> Outcome {
    let (mut feasible, mut sampled, mut worst, mut bad) = (0, 0, 0.0f64, 0);
    for r in runs {
        for &(_, slack, status) in &r.audit {
            sampled += 1;
            if status == QpStatus::Solved {
                feasible += 1;
                worst = worst.max(slack);
                bad += usize::from(slack > SLACK_TOL);
            }
        }
    }
    check(
        bad == 0 && sampled == SLACK_SAMPLES * runs.len(),
        format!("{sampled} sampled steps, {feasible} hard-feasible, max slack there {worst:.2e} atm"),
    )
}

// ---------------------------------------------------------------- 11

fn determinism(a: &Path, b: &Path, first: &PipelineOutput) -> Outcome {
    let mut files = vec![first.dataset.clone(), datagen::meta_path(&first.dataset), first.weights.clone()];
    for (p, _) in &first.traces {
        files.push(p.clone());
        files.push(Trace::meta_path(p));
    }
    let mut differ = Vec::new();
    for f in &files {
        let rel = f.strip_prefix(a).map_err(|e| e.to_string())?;
        let (x, y) = (fs::read(f).map_err(|e| e.to_string())?, fs::read(b.join(rel)).map_err(|e| e.to_string())?);
        if x != y {
            differ.push(rel.display().to_string());
        }
    }
    check(differ.is_empty(), format!("{} files compared, differing: {differ:?}", files.len()))
}

// ----------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

fn main() {
    let config = Config::default();
    let scenarios = [Scenario::step(), Scenario::ramp_step()];
    let dirs = [tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir")];

    let start = Instant::now();
    let first = harness::pipeline(&config, &scenarios, dirs[0].path());
    let first_time = start.elapsed();
    let second = harness::pipeline(&config, &scenarios, dirs[1].path());

    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("structural fidelity", guarded(structural_fidelity)));
    match &first {
        Ok(run) => results.push(("AD correctness", guarded(|| ad_correctness(&run.network)))),
        Err(e) => results.push(("AD correctness", Err(format!("pipeline failed: {e}")))),
    }
    results.push(("gradient correctness", guarded(gradient_correctness)));
    results.push(("QP oracle equivalence", guarded(qp_equivalence)));
    results.push(("LHS stratification", guarded(lhs_property)));

    match &first {
        Ok(run) => {
            // The whole pipeline time bounds the training time from above.
            results.push(("model quality", guarded(|| model_quality(&config, run, first_time))));
            let mut runs = Vec::new();
            let mut errors = Vec::new();
            for (i, sc) in scenarios.iter().enumerate() {
                for (j, kind) in [ControllerKind::NnMpc, ControllerKind::PlantMpc].into_iter().enumerate() {
                    match run_with_audit(&config, sc, kind, &run.network, 1000 + (2 * i + j) as u64) {
                        Ok(r) => runs.push(r),
                        Err(e) => errors.push(e),
                    }
                }
            }
            // The audited re-runs must reproduce the pipeline's traces.
            for r in &runs {
                let same = run.traces.iter().any(|(_, t)| t.meta.scenario == r.scenario.name && t.meta.controller == r.trace.meta.controller && t.to_csv_string() == r.trace.to_csv_string());
                if !same {
                    errors.push(format!("{}/{} re-run differs from the pipeline trace", r.scenario.name, r.trace.meta.controller));
                }
            }
            let gate = |f: &dyn Fn(&[Run]) -> Outcome| if errors.is_empty() { guarded(|| f(&runs)) } else { Err(errors.join("; ")) };
            results.push(("closed-loop hard constraints", gate(&hard_constraints)));
            results.push(("tracking", gate(&tracking)));
            results.push(("controller ordering and pressure limit", gate(&orderings)));
            results.push(("slack discipline", gate(&slack_discipline)));
        }
        Err(e) => {
            for name in ["model quality", "closed-loop hard constraints", "tracking", "controller ordering and pressure limit", "slack discipline"] {
                results.push((name, Err(format!("pipeline failed: {e}"))));
            }
        }
    }
    match (&first, &second) {
        (Ok(run), Ok(_)) => results.push(("determinism", guarded(|| determinism(dirs[0].path(), dirs[1].path(), run)))),
        (Err(e), _) | (_, Err(e)) => results.push(("determinism", Err(format!("pipeline failed: {e}")))),
    }

    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
