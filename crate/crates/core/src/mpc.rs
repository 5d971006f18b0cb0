//! Receding-horizon controller.
//!
//! Each step linearizes a one-step model at the latest measurement, builds
//! the condensed QP over the decision vector
//!
//! ```text
//! z = [u_0, ..., u_{Hu-1}, ε_1, ..., ε_Hp]      u_j = [dQ_H2, dQ_air]
//! ```
//!
//! and applies the first flow increment. Predicted states are eliminated
//! through the model, increments beyond the control horizon are zero, and
//! the anode pressure limit is softened by one nonnegative slack per
//! prediction step.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{self, Jacobian};
use crate::nn::Network;
use crate::plant::{self, Measurement, PlantError, PlantInputs, PlantParams, PlantState};
use crate::qp::{self, ActiveConstraint, QpProblem, QpSettings, QpStatus};
use crate::ssm::{idx, StateSpaceModel, StateVec, NU, NX};

/// Increments above the configured bounds by less than this are treated as
/// solver round-off rather than an anomaly.
const ANOMALY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("invalid MPC configuration: {0}")]
    Config(String),
    #[error("non-finite measurement {0:?}")]
    Measurement(Measurement),
    #[error("Jacobian is not finite")]
    Jacobian,
    #[error(transparent)]
    Plant(#[from] PlantError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub h_p: usize,
    pub h_u: usize,
    /// V⁻²
    pub q_weight: f64,
    /// Per-input increment weight, lpm⁻².
    pub r_weight: [f64; 2],
    pub rho: f64,
    /// V
    pub reference: f64,
    /// Per-step increment bounds, lpm.
    pub du_min: [f64; 2],
    pub du_max: [f64; 2],
    /// Bounds on the change between consecutive increments; unbounded by
    /// default.
    pub ddu_min: [f64; 2],
    pub ddu_max: [f64; 2],
    pub q_h2_bounds: (f64, f64),
    pub q_air_bounds: (f64, f64),
    /// atm
    pub p_h2_max: f64,
    /// s
    pub dt: f64,
    /// Use the Jacobian's partials with respect to V and P_H2 in `A` instead
    /// of the identity.
    pub exact_state_partials: bool,
    pub warm_start: bool,
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            h_p: 20,
            h_u: 5,
            q_weight: 10.0,
            r_weight: [3e-2, 1e-3],
            rho: 1e5,
            reference: 48.0,
            du_min: [-40.0, -40.0],
            du_max: [20.0, 20.0],
            ddu_min: [f64::NEG_INFINITY; 2],
            ddu_max: [f64::INFINITY; 2],
            q_h2_bounds: (100.0, 400.0),
            q_air_bounds: (300.0, 700.0),
            p_h2_max: 2.5,
            dt: 0.5,
            exact_state_partials: false,
            warm_start: true,
            qp: QpSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |m: String| Err(MpcError::Config(m));
        if self.h_u == 0 || self.h_u > self.h_p {
            return bad(format!("need 1 <= h_u <= h_p, got h_u = {}, h_p = {}", self.h_u, self.h_p));
        }
        if !(self.q_weight >= 0.0) || self.r_weight.iter().any(|r| !(*r >= 0.0)) {
            return bad("weights must be nonnegative".into());
        }
        let largest = self.q_weight.max(self.r_weight[0]).max(self.r_weight[1]);
        if !(self.rho > 0.0 && self.rho.is_finite()) || self.rho < 1e3 * largest {
            return bad(format!("rho = {} must be positive and at least 1e3 x the largest weight", self.rho));
        }
        for i in 0..NU {
            if !(self.du_min[i] <= 0.0 && self.du_max[i] >= 0.0) || !self.du_min[i].is_finite() || !self.du_max[i].is_finite()
            {
                return bad(format!("increment bounds [{}, {}] must be finite and contain 0", self.du_min[i], self.du_max[i]));
            }
            if !(self.ddu_min[i] <= 0.0 && self.ddu_max[i] >= 0.0) {
                return bad("second-difference bounds must contain 0".into());
            }
        }
        for (name, (lo, hi)) in [("q_h2_bounds", self.q_h2_bounds), ("q_air_bounds", self.q_air_bounds)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad(format!("{name} = ({lo}, {hi})"));
            }
        }
        if !(self.p_h2_max > 0.0) || !self.reference.is_finite() || !(self.dt > 0.0) {
            return bad("p_h2_max, reference and dt must be positive and finite".into());
        }
        if !(self.qp.tol > 0.0) || self.qp.max_iter == 0 {
            return bad(format!("qp settings {:?}", self.qp));
        }
        Ok(())
    }

    pub fn flow_bounds(&self) -> [(f64, f64); 2] {
        [self.q_h2_bounds, self.q_air_bounds]
    }

    fn second_difference_enabled(&self) -> bool {
        (0..NU).any(|i| self.ddu_min[i].is_finite() || self.ddu_max[i].is_finite())
    }

    pub fn layout(&self) -> QpLayout {
        QpLayout::new(self)
    }
}

/// Row and column offsets of the condensed QP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QpLayout {
    pub h_p: usize,
    pub h_u: usize,
    pub n: usize,
    pub increment_rows: usize,
    pub flow_rows: usize,
    pub pressure_rows: usize,
    pub slack_rows: usize,
    /// Equal to `m` when second-difference bounds are disabled.
    pub ddu_rows: usize,
    pub m: usize,
}

impl QpLayout {
    fn new(c: &MpcConfig) -> Self {
        let n = NU * c.h_u + c.h_p;
        let increment_rows = 0;
        let flow_rows = increment_rows + NU * c.h_u;
        let pressure_rows = flow_rows + NU * c.h_u;
        let slack_rows = pressure_rows + c.h_p;
        let ddu_rows = slack_rows + c.h_p;
        let m = ddu_rows + if c.second_difference_enabled() { NU * c.h_u } else { 0 };
        Self { h_p: c.h_p, h_u: c.h_u, n, increment_rows, flow_rows, pressure_rows, slack_rows, ddu_rows, m }
    }

    pub fn input_col(&self, step: usize, input: usize) -> usize {
        NU * step + input
    }

    /// Column of `ε_k`, `k` in `1..=h_p`.
    pub fn slack_col(&self, k: usize) -> usize {
        NU * self.h_u + k - 1
    }

    /// Move an active set one step forward in time, dropping constraints
    /// that fall off the front.
    pub fn shift(&self, active: &[ActiveConstraint]) -> Vec<ActiveConstraint> {
        let per_step = |start: usize, width: usize, count: usize, row: usize| -> Option<usize> {
            let rel = row - start;
            let (k, i) = (rel / width, rel % width);
            (k > 0 && k < count).then(|| start + (k - 1) * width + i)
        };
        active
            .iter()
            .filter_map(|c| {
                let r = c.row;
                let shifted = if r < self.flow_rows {
                    per_step(self.increment_rows, NU, self.h_u, r)
                } else if r < self.pressure_rows {
                    per_step(self.flow_rows, NU, self.h_u, r)
                } else if r < self.slack_rows {
                    per_step(self.pressure_rows, 1, self.h_p, r)
                } else if r < self.ddu_rows {
                    per_step(self.slack_rows, 1, self.h_p, r)
                } else if r < self.m {
                    per_step(self.ddu_rows, NU, self.h_u, r)
                } else {
                    None
                };
                shifted.map(|row| ActiveConstraint { row, bound: c.bound })
            })
            .collect()
    }
}

/// Stacked prediction `x_k = Φ_k x_0 + Γ_k U` for `k = 1..=h_p`, where `U`
/// holds the `h_u` increments.
struct Condensed {
    phi: Vec<SMatrix<f64, NX, NX>>,
    gamma: Vec<DMatrix<f64>>,
}

fn condense(model: &StateSpaceModel, h_p: usize, h_u: usize) -> Condensed {
    let nu = NU * h_u;
    let mut phi = Vec::with_capacity(h_p);
    let mut gamma = Vec::with_capacity(h_p);
    let a = DMatrix::from_fn(NX, NX, |r, c| model.a[(r, c)]);
    let mut phi_k = SMatrix::<f64, NX, NX>::identity();
    let mut gamma_k = DMatrix::<f64>::zeros(NX, nu);
    for k in 0..h_p {
        phi_k = model.a * phi_k;
        gamma_k = &a * &gamma_k;
        if k < h_u {
            for r in 0..NX {
                for c in 0..NU {
                    gamma_k[(r, NU * k + c)] += model.b[(r, c)];
                }
            }
        }
        phi.push(phi_k);
        gamma.push(gamma_k.clone());
    }
    Condensed { phi, gamma }
}

/// Condensed QP for one control step.
pub fn build_qp(model: &StateSpaceModel, config: &MpcConfig, x_init: &StateVec, u_prev: &[f64; 2]) -> QpProblem {
    let lay = config.layout();
    let cond = condense(model, config.h_p, config.h_u);
    let nu = NU * config.h_u;
    let n = lay.n;

    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut g = DVector::<f64>::zeros(n);
    for k in 0..config.h_p {
        let free = (cond.phi[k] * x_init)[idx::V] - config.reference;
        let cg = cond.gamma[k].row(idx::V);
        for i in 0..nu {
            g[i] += 2.0 * config.q_weight * cg[i] * free;
            for j in 0..nu {
                h[(i, j)] += 2.0 * config.q_weight * cg[i] * cg[j];
            }
        }
    }
    for j in 0..config.h_u {
        for i in 0..NU {
            let c = lay.input_col(j, i);
            h[(c, c)] += 2.0 * config.r_weight[i];
        }
    }
    for k in 1..=config.h_p {
        let c = lay.slack_col(k);
        h[(c, c)] = 2.0 * config.rho;
    }
    // Exact symmetry for the solver's check.
    let h = (&h + h.transpose()) * 0.5;

    let m = lay.m;
    let mut a = DMatrix::<f64>::zeros(m, n);
    let mut l = DVector::<f64>::zeros(m);
    let mut u = DVector::<f64>::zeros(m);
    for j in 0..config.h_u {
        for i in 0..NU {
            let r = lay.increment_rows + NU * j + i;
            a[(r, lay.input_col(j, i))] = 1.0;
            l[r] = config.du_min[i];
            u[r] = config.du_max[i];
        }
    }
    let flows = config.flow_bounds();
    for k in 1..=config.h_u {
        let free = cond.phi[k - 1] * x_init;
        for (i, state) in [idx::Q_H2, idx::Q_AIR].into_iter().enumerate() {
            let r = lay.flow_rows + NU * (k - 1) + i;
            for c in 0..nu {
                a[(r, c)] = cond.gamma[k - 1][(state, c)];
            }
            l[r] = flows[i].0 - free[state];
            u[r] = flows[i].1 - free[state];
        }
    }
    for k in 1..=config.h_p {
        let r = lay.pressure_rows + k - 1;
        for c in 0..nu {
            a[(r, c)] = cond.gamma[k - 1][(idx::P, c)];
        }
        a[(r, lay.slack_col(k))] = -1.0;
        l[r] = f64::NEG_INFINITY;
        u[r] = config.p_h2_max - (cond.phi[k - 1] * x_init)[idx::P];

        let s = lay.slack_rows + k - 1;
        a[(s, lay.slack_col(k))] = 1.0;
        l[s] = 0.0;
        u[s] = f64::INFINITY;
    }
    if lay.ddu_rows < m {
        for j in 0..config.h_u {
            for i in 0..NU {
                let r = lay.ddu_rows + NU * j + i;
                a[(r, lay.input_col(j, i))] = 1.0;
                if j == 0 {
                    l[r] = config.ddu_min[i] + u_prev[i];
                    u[r] = config.ddu_max[i] + u_prev[i];
                } else {
                    a[(r, lay.input_col(j - 1, i))] = -1.0;
                    l[r] = config.ddu_min[i];
                    u[r] = config.ddu_max[i];
                }
            }
        }
    }
    QpProblem { h, g, a, l, u }
}

/// The same problem with the pressure limit made hard (every slack pinned
/// to zero). Used to audit slack usage.
pub fn build_qp_hard(model: &StateSpaceModel, config: &MpcConfig, x_init: &StateVec, u_prev: &[f64; 2]) -> QpProblem {
    let mut p = build_qp(model, config, x_init, u_prev);
    let lay = config.layout();
    for k in 0..config.h_p {
        p.u[lay.slack_rows + k] = 0.0;
    }
    p
}

/// Predicted `(V, P_H2)` for `k = 1..=h_p` under the increments in `z`.
pub fn predict_outputs(model: &StateSpaceModel, config: &MpcConfig, x_init: &StateVec, z: &DVector<f64>) -> Vec<[f64; 2]> {
    let cond = condense(model, config.h_p, config.h_u);
    let uz = z.rows(0, NU * config.h_u).into_owned();
    (0..config.h_p)
        .map(|k| {
            let x = cond.phi[k] * x_init + StateVec::from_iterator((&cond.gamma[k] * &uz).iter().copied());
            [x[idx::V], x[idx::P]]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    /// Last applied `(q_h2, q_air)`, lpm.
    pub flows: [f64; 2],
    /// Last applied increment.
    pub last_increment: [f64; 2],
    /// Active set of the previous solution, shifted one step.
    pub warm_start: Vec<ActiveConstraint>,
    pub step: usize,
}

impl ControllerState {
    pub fn new(flows: [f64; 2], config: &MpcConfig) -> Result<Self, MpcError> {
        for (i, (lo, hi)) in config.flow_bounds().into_iter().enumerate() {
            if !(flows[i] >= lo && flows[i] <= hi) {
                return Err(MpcError::Config(format!("initial flow {} outside [{lo}, {hi}]", flows[i])));
            }
        }
        Ok(Self { flows, last_increment: [0.0; 2], warm_start: Vec::new(), step: 0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDecision {
    /// Commanded `(q_h2, q_air)`, lpm.
    pub flows: [f64; 2],
    /// Applied increment, `flows - previous flows`.
    pub increment: [f64; 2],
    /// Predicted `(V, P_H2)` over the prediction horizon.
    pub predicted: Vec<[f64; 2]>,
    pub slack: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub solve_time: Duration,
    /// QP failed; flows were held.
    pub degraded: bool,
    /// Set when the output clamp had to correct the QP result.
    pub anomaly: Option<String>,
    pub jacobian: Jacobian,
    pub model: StateSpaceModel,
    pub x_init: StateVec,
    pub u_prev: [f64; 2],
}

impl StepDecision {
    pub fn slack_max(&self) -> f64 {
        self.slack.iter().copied().fold(0.0, f64::max)
    }
}

fn check_measurement(m: &Measurement) -> Result<(), MpcError> {
    if m.v_fc.is_finite() && m.p_h2.is_finite() {
        Ok(())
    } else {
        Err(MpcError::Measurement(*m))
    }
}

/// Point at which the one-step model is linearized.
pub fn linearization_point(ctrl: &ControllerState, measurement: &Measurement, current: f64) -> [f64; 5] {
    [ctrl.flows[0], ctrl.flows[1], current, measurement.v_fc, measurement.p_h2]
}

/// NN-MPC step: linearize the network at the latest measurement.
pub fn control_step(
    ctrl: &mut ControllerState,
    measurement: &Measurement,
    current: f64,
    prev_current: f64,
    network: &Network,
    config: &MpcConfig,
) -> Result<StepDecision, MpcError> {
    check_measurement(measurement)?;
    let jac = autodiff::jacobian(network, &linearization_point(ctrl, measurement, current));
    decide(ctrl, measurement, current, prev_current, jac, config)
}

/// Plant-MPC step: same pipeline with the Jacobian taken from the plant
/// itself at its true state.
#[allow(clippy::too_many_arguments)]
pub fn baseline_plant_mpc_step(
    ctrl: &mut ControllerState,
    measurement: &Measurement,
    current: f64,
    prev_current: f64,
    plant_state: &PlantState,
    params: &PlantParams,
    config: &MpcConfig,
) -> Result<StepDecision, MpcError> {
    check_measurement(measurement)?;
    let jac = plant_jacobian(plant_state, ctrl.flows, current, params, config.dt)?;
    decide(ctrl, measurement, current, prev_current, jac, config)
}

/// Central finite differences of one plant step, expressed in the same
/// coordinates as the network: the next voltage is the current voltage
/// plus the change the step produces, so `∂V'/∂V = 1` and `∂P'/∂V = 0`.
pub fn plant_jacobian(
    state: &PlantState,
    flows: [f64; 2],
    current: f64,
    params: &PlantParams,
    dt: f64,
) -> Result<Jacobian, PlantError> {
    const H_FLOW: f64 = 1.0;
    const H_CURRENT: f64 = 0.5;
    const H_PRESSURE: f64 = 1e-3;
    // (V after the step minus V before it, P_H2 after the step)
    let delta = |s: &PlantState, q_h2: f64, q_air: f64, i: f64| -> Result<[f64; 2], PlantError> {
        let inputs = PlantInputs::new(q_h2, q_air, i);
        let v0 = plant::plant_output(s, &inputs, params)?.0;
        let next = plant::plant_step(s, &inputs, params, dt)?;
        let (v1, p1) = plant::plant_output(&next, &inputs, params)?;
        Ok([v1 - v0, p1])
    };
    let central = |plus: [f64; 2], minus: [f64; 2], h: f64| [(plus[0] - minus[0]) / (2.0 * h), (plus[1] - minus[1]) / (2.0 * h)];
    let [q_h2, q_air] = flows;
    let mut jac = [[0.0; 5]; 2];
    let columns = [
        central(delta(state, q_h2 + H_FLOW, q_air, current)?, delta(state, q_h2 - H_FLOW, q_air, current)?, H_FLOW),
        central(delta(state, q_h2, q_air + H_FLOW, current)?, delta(state, q_h2, q_air - H_FLOW, current)?, H_FLOW),
        central(
            delta(state, q_h2, q_air, current + H_CURRENT)?,
            delta(state, q_h2, q_air, (current - H_CURRENT).max(0.0))?,
            0.5 * (current + H_CURRENT - (current - H_CURRENT).max(0.0)),
        ),
        [1.0, 0.0],
        {
            let up = PlantState { p_h2: state.p_h2 + H_PRESSURE, ..*state };
            let dn = PlantState { p_h2: (state.p_h2 - H_PRESSURE).max(0.0), ..*state };
            let h = 0.5 * (up.p_h2 - dn.p_h2);
            central(delta(&up, q_h2, q_air, current)?, delta(&dn, q_h2, q_air, current)?, h)
        },
    ];
    for (c, col) in columns.iter().enumerate() {
        jac[0][c] = col[0];
        jac[1][c] = col[1];
    }
    let jac = Jacobian(jac);
    if jac.is_finite() {
        Ok(jac)
    } else {
        Err(PlantError::IntegrationFailure { field: "jacobian" })
    }
}

/// Steps (3)-(7) of the control pipeline for a given Jacobian.
pub fn decide(
    ctrl: &mut ControllerState,
    measurement: &Measurement,
    current: f64,
    prev_current: f64,
    jac: Jacobian,
    config: &MpcConfig,
) -> Result<StepDecision, MpcError> {
    if !jac.is_finite() {
        return Err(MpcError::Jacobian);
    }
    let model = if config.exact_state_partials {
        StateSpaceModel::assemble_with_state_partials(&jac)
    } else {
        StateSpaceModel::assemble(&jac)
    };
    let x_init = StateVec::from([measurement.v_fc, measurement.p_h2, current - prev_current, ctrl.flows[0], ctrl.flows[1]]);
    let u_prev = ctrl.last_increment;
    let problem = build_qp(&model, config, &x_init, &u_prev);
    let lay = config.layout();

    let hint: &[ActiveConstraint] = if config.warm_start { &ctrl.warm_start } else { &[] };
    let started = Instant::now();
    let solution = qp::solve_warm(&problem, &config.qp, hint).map_err(|e| MpcError::Config(e.to_string()))?;
    let solve_time = started.elapsed();

    let degraded = solution.status != QpStatus::Solved;
    let (raw, predicted, slack) = if degraded {
        let hold = DVector::zeros(lay.n);
        ([0.0; 2], predict_outputs(&model, config, &x_init, &hold), vec![0.0; config.h_p])
    } else {
        let z = &solution.z;
        let slack = (1..=config.h_p).map(|k| z[lay.slack_col(k)].max(0.0)).collect();
        ([z[0], z[1]], predict_outputs(&model, config, &x_init, z), slack)
    };
    let (flows, increment, anomaly) = apply_increment(ctrl.flows, raw, config);

    ctrl.warm_start = if degraded { Vec::new() } else { lay.shift(&solution.active) };
    ctrl.flows = flows;
    ctrl.last_increment = increment;
    ctrl.step += 1;
    Ok(StepDecision {
        flows,
        increment,
        predicted,
        slack,
        status: solution.status,
        iterations: solution.iterations,
        solve_time,
        degraded,
        anomaly,
        jacobian: jac,
        model,
        x_init,
        u_prev,
    })
}

/// Add `raw` to `last` and force the result into the increment and flow
/// bounds exactly, so that `flows - last` itself satisfies the increment
/// bounds in floating point.
fn apply_increment(last: [f64; 2], raw: [f64; 2], config: &MpcConfig) -> ([f64; 2], [f64; 2], Option<String>) {
    let mut flows = [0.0; 2];
    let mut increment = [0.0; 2];
    let mut notes = Vec::new();
    for i in 0..NU {
        let (lo, hi) = config.flow_bounds()[i];
        let (dlo, dhi) = (config.du_min[i], config.du_max[i]);
        let target = last[i] + raw[i];
        if raw[i] < dlo - ANOMALY_TOL || raw[i] > dhi + ANOMALY_TOL || target < lo - ANOMALY_TOL || target > hi + ANOMALY_TOL {
            notes.push(format!("input {i}: increment {:.6} to {:.6} clamped", raw[i], target));
        }
        let mut q = (last[i] + raw[i].clamp(dlo, dhi)).clamp(lo, hi);
        while q - last[i] > dhi {
            q = q.next_down();
        }
        while q - last[i] < dlo {
            q = q.next_up();
        }
        flows[i] = q.clamp(lo, hi);
        increment[i] = flows[i] - last[i];
    }
    let anomaly = (!notes.is_empty()).then(|| notes.join("; "));
    (flows, increment, anomaly)
}
