//! Lumped-parameter PEM fuel cell stack.
//!
//! Two gas balances drive the state: the anode holds pure hydrogen, the
//! cathode an oxygen/nitrogen mixture. Inflows are volumetric (lpm) and
//! converted to molar flow with the ideal gas law at stack temperature and
//! ambient pressure. Reactant consumption follows Faraday's law and both
//! compartments vent through a linear valve to ambient.
//!
//! The stack voltage is a static polarization curve:
//!
//! ```text
//! V = N * (E0 + RT/2F * ln(p_h2 * sqrt(p_o2)))
//!     - a * ln(1 + I / (i0 * p_o2))       activation (exchange current ~ p_o2)
//!     - r * I                             ohmic
//!     + c * ln(1 - I / i_lim)             concentration
//! ```
//!
//! The default parameters are calibrated (see `examples/calibrate.rs`) so
//! that the nominal point `q_h2 = 250 lpm, q_air = 500 lpm, I = 125 A`
//! settles at 48 V, i.e. a 6 kW stack.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pascal per standard atmosphere.
pub const PA_PER_ATM: f64 = 101_325.0;

/// Upper bound on the RK4 substep inside one call to [`step`].
pub const MAX_SUBSTEP: f64 = 0.01;

/// Floor applied to partial pressures inside logarithms of the polarization
/// curve, so a fully depleted compartment yields a finite (very low) voltage.
pub const PRESSURE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("invalid plant state: {0}")]
    InvalidState(String),
    #[error("invalid plant parameter `{name}` = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("integration produced non-finite `{field}`")]
    IntegrationFailure { field: &'static str },
    #[error("current {current} A is at or beyond the limiting current {limit} A")]
    LimitCurrent { current: f64, limit: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    pub n_cells: u32,
    /// C/mol
    pub faraday: f64,
    /// J/(mol K)
    pub gas_constant: f64,
    /// K
    pub temperature: f64,
    /// m^3
    pub anode_volume: f64,
    /// m^3
    pub cathode_volume: f64,
    /// atm
    pub ambient_pressure: f64,
    /// V per cell
    pub nernst_e0: f64,
    /// Stack ohmic resistance, ohm.
    pub r_ohmic: f64,
    /// Stack Tafel coefficient, V.
    pub act_coeff: f64,
    /// Exchange current at 1 atm oxygen partial pressure, A.
    pub act_current: f64,
    /// Stack concentration-loss coefficient, V.
    pub conc_coeff: f64,
    /// Limiting current, A.
    pub i_limit: f64,
    /// Stack hydrogen consumption, mol/(A s).
    pub h2_consumption_gain: f64,
    /// Stack oxygen consumption, mol/(A s).
    pub o2_consumption_gain: f64,
    /// mol/(s atm)
    pub outflow_coeff_anode: f64,
    /// mol/(s atm)
    pub outflow_coeff_cathode: f64,
    pub o2_fraction_air: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        let n_cells = 60;
        let faraday = 96_485.332_12;
        Self {
            n_cells,
            faraday,
            gas_constant: 8.314_462_618,
            temperature: 343.15,
            anode_volume: 8.4e-4,
            cathode_volume: 2.1e-3,
            ambient_pressure: 1.0,
            nernst_e0: 1.056_372,
            r_ohmic: 0.004,
            act_coeff: 3.0,
            act_current: 2.0,
            conc_coeff: 0.3,
            i_limit: 260.0,
            h2_consumption_gain: f64::from(n_cells) / (2.0 * faraday),
            o2_consumption_gain: f64::from(n_cells) / (4.0 * faraday),
            outflow_coeff_anode: 0.12,
            outflow_coeff_cathode: 0.15,
            o2_fraction_air: 0.21,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        if self.n_cells == 0 {
            return Err(PlantError::InvalidParameter { name: "n_cells", value: 0.0 });
        }
        let positive = [
            ("faraday", self.faraday),
            ("gas_constant", self.gas_constant),
            ("temperature", self.temperature),
            ("anode_volume", self.anode_volume),
            ("cathode_volume", self.cathode_volume),
            ("ambient_pressure", self.ambient_pressure),
            ("nernst_e0", self.nernst_e0),
            ("r_ohmic", self.r_ohmic),
            ("act_coeff", self.act_coeff),
            ("act_current", self.act_current),
            ("conc_coeff", self.conc_coeff),
            ("i_limit", self.i_limit),
            ("h2_consumption_gain", self.h2_consumption_gain),
            ("o2_consumption_gain", self.o2_consumption_gain),
            ("outflow_coeff_anode", self.outflow_coeff_anode),
            ("outflow_coeff_cathode", self.outflow_coeff_cathode),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(PlantError::InvalidParameter { name, value });
            }
        }
        let x = self.o2_fraction_air;
        if !(x > 0.0 && x < 1.0) {
            return Err(PlantError::InvalidParameter { name: "o2_fraction_air", value: x });
        }
        Ok(())
    }

    /// Molar flow (mol/s) of a volumetric flow given in lpm, ideal gas at
    /// stack temperature and ambient pressure.
    pub fn lpm_to_mol_per_s(&self, lpm: f64) -> f64 {
        let m3_per_s = lpm * 1e-3 / 60.0;
        m3_per_s * self.ambient_pressure * PA_PER_ATM / (self.gas_constant * self.temperature)
    }

    /// atm of pressure rise per mol added to a compartment of `volume` m^3.
    fn atm_per_mol(&self, volume: f64) -> f64 {
        self.gas_constant * self.temperature / (volume * PA_PER_ATM)
    }
}

/// Partial pressures in atm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub p_h2: f64,
    pub p_o2: f64,
    pub p_n2: f64,
}

impl PlantState {
    /// Compartments filled to ambient pressure: pure hydrogen on the anode,
    /// air on the cathode.
    pub fn ambient(params: &PlantParams) -> Self {
        let p = params.ambient_pressure;
        Self {
            p_h2: p,
            p_o2: params.o2_fraction_air * p,
            p_n2: (1.0 - params.o2_fraction_air) * p,
        }
    }

    fn check(&self) -> Result<(), PlantError> {
        for (name, v) in [("p_h2", self.p_h2), ("p_o2", self.p_o2), ("p_n2", self.p_n2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(PlantError::InvalidState(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    fn axpy(&self, h: f64, rate: &PlantRates) -> Self {
        Self {
            p_h2: self.p_h2 + h * rate.p_h2,
            p_o2: self.p_o2 + h * rate.p_o2,
            p_n2: self.p_n2 + h * rate.p_n2,
        }
    }
}

/// Time derivative of [`PlantState`], atm/s per field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantRates {
    pub p_h2: f64,
    pub p_o2: f64,
    pub p_n2: f64,
}

impl PlantRates {
    pub fn norm(&self) -> f64 {
        (self.p_h2 * self.p_h2 + self.p_o2 * self.p_o2 + self.p_n2 * self.p_n2).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantInputs {
    /// lpm
    pub q_h2: f64,
    /// lpm
    pub q_air: f64,
    /// A
    pub current: f64,
}

impl PlantInputs {
    pub fn new(q_h2: f64, q_air: f64, current: f64) -> Self {
        Self { q_h2, q_air, current }
    }

    fn check(&self) -> Result<(), PlantError> {
        for (name, v) in [("q_h2", self.q_h2), ("q_air", self.q_air), ("current", self.current)] {
            if !v.is_finite() || v < 0.0 {
                return Err(PlantError::InvalidState(format!("input {name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Noisy sensor reading of stack voltage (V) and anode pressure (atm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub v_fc: f64,
    pub p_h2: f64,
}

/// Standard deviations of the additive Gaussian sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseStd {
    /// V
    pub voltage: f64,
    /// atm
    pub pressure: f64,
}

impl Default for NoiseStd {
    fn default() -> Self {
        Self { voltage: 0.05, pressure: 0.005 }
    }
}

impl NoiseStd {
    pub const ZERO: NoiseStd = NoiseStd { voltage: 0.0, pressure: 0.0 };
}

pub fn plant_derivative(
    state: &PlantState,
    inputs: &PlantInputs,
    params: &PlantParams,
) -> Result<PlantRates, PlantError> {
    state.check()?;
    inputs.check()?;
    let p_amb = params.ambient_pressure;
    let current = inputs.current;

    let h2_in = params.lpm_to_mol_per_s(inputs.q_h2);
    let h2_used = params.h2_consumption_gain * current;
    let h2_out = params.outflow_coeff_anode * (state.p_h2 - p_amb).max(0.0);
    let dp_h2 = params.atm_per_mol(params.anode_volume) * (h2_in - h2_used - h2_out);

    let air_in = params.lpm_to_mol_per_s(inputs.q_air);
    let o2_used = params.o2_consumption_gain * current;
    let p_cathode = state.p_o2 + state.p_n2;
    let vent = params.outflow_coeff_cathode * (p_cathode - p_amb).max(0.0);
    let o2_share = if p_cathode > 0.0 { state.p_o2 / p_cathode } else { 0.0 };
    let k_c = params.atm_per_mol(params.cathode_volume);
    let dp_o2 = k_c * (params.o2_fraction_air * air_in - o2_used - vent * o2_share);
    let dp_n2 = k_c * ((1.0 - params.o2_fraction_air) * air_in - vent * (1.0 - o2_share));

    let rates = PlantRates { p_h2: dp_h2, p_o2: dp_o2, p_n2: dp_n2 };
    if !(dp_h2.is_finite() && dp_o2.is_finite() && dp_n2.is_finite()) {
        return Err(PlantError::InvalidState(format!("non-finite rates {rates:?}")));
    }
    Ok(rates)
}

/// Advance the plant by `dt` seconds with inputs held constant, using RK4
/// with substeps no longer than [`MAX_SUBSTEP`].
pub fn plant_step(
    state: &PlantState,
    inputs: &PlantInputs,
    params: &PlantParams,
    dt: f64,
) -> Result<PlantState, PlantError> {
    plant_step_with_substep(state, inputs, params, dt, MAX_SUBSTEP)
}

pub fn plant_step_with_substep(
    state: &PlantState,
    inputs: &PlantInputs,
    params: &PlantParams,
    dt: f64,
    max_substep: f64,
) -> Result<PlantState, PlantError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(PlantError::InvalidState(format!("dt = {dt}")));
    }
    let substeps = (dt / max_substep - 1e-9).ceil().max(1.0) as usize;
    let h = dt / substeps as f64;
    let mut s = *state;
    for _ in 0..substeps {
        let k1 = plant_derivative(&s, inputs, params)?;
        let k2 = plant_derivative(&clamp(s.axpy(0.5 * h, &k1)), inputs, params)?;
        let k3 = plant_derivative(&clamp(s.axpy(0.5 * h, &k2)), inputs, params)?;
        let k4 = plant_derivative(&clamp(s.axpy(h, &k3)), inputs, params)?;
        let next = PlantState {
            p_h2: s.p_h2 + h / 6.0 * (k1.p_h2 + 2.0 * k2.p_h2 + 2.0 * k3.p_h2 + k4.p_h2),
            p_o2: s.p_o2 + h / 6.0 * (k1.p_o2 + 2.0 * k2.p_o2 + 2.0 * k3.p_o2 + k4.p_o2),
            p_n2: s.p_n2 + h / 6.0 * (k1.p_n2 + 2.0 * k2.p_n2 + 2.0 * k3.p_n2 + k4.p_n2),
        };
        for (field, v) in [("p_h2", next.p_h2), ("p_o2", next.p_o2), ("p_n2", next.p_n2)] {
            if !v.is_finite() {
                return Err(PlantError::IntegrationFailure { field });
            }
        }
        s = clamp(next);
    }
    Ok(s)
}

fn clamp(s: PlantState) -> PlantState {
    PlantState { p_h2: s.p_h2.max(0.0), p_o2: s.p_o2.max(0.0), p_n2: s.p_n2.max(0.0) }
}

/// Stack voltage (V) and anode hydrogen pressure (atm). Only the current
/// of `inputs` enters the electrical model.
pub fn plant_output(
    state: &PlantState,
    inputs: &PlantInputs,
    params: &PlantParams,
) -> Result<(f64, f64), PlantError> {
    let current = inputs.current;
    if current >= params.i_limit {
        return Err(PlantError::LimitCurrent { current, limit: params.i_limit });
    }
    if !(current >= 0.0) {
        return Err(PlantError::InvalidState(format!("current = {current}")));
    }
    state.check()?;
    let p_h2 = state.p_h2.max(PRESSURE_FLOOR);
    let p_o2 = state.p_o2.max(PRESSURE_FLOOR);
    let rt_2f = params.gas_constant * params.temperature / (2.0 * params.faraday);
    let nernst = params.nernst_e0 + rt_2f * (p_h2 * p_o2.sqrt()).ln();
    let activation = params.act_coeff * (current / (params.act_current * p_o2)).ln_1p();
    let ohmic = params.r_ohmic * current;
    let concentration = -params.conc_coeff * (-current / params.i_limit).ln_1p();
    let v = f64::from(params.n_cells) * nernst - activation - ohmic - concentration;
    Ok((v, state.p_h2))
}

/// Add independent zero-mean Gaussian noise to a true `(voltage, pressure)`
/// output.
pub fn measure<R: Rng + ?Sized>(output: (f64, f64), noise: &NoiseStd, rng: &mut R) -> Measurement {
    Measurement {
        v_fc: output.0 + gaussian(noise.voltage, rng),
        p_h2: output.1 + gaussian(noise.pressure, rng),
    }
}

fn gaussian<R: Rng + ?Sized>(std: f64, rng: &mut R) -> f64 {
    // The draw is consumed even at zero std so noisy and noiseless runs
    // stay aligned on the same random stream.
    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
    std * z
}

/// A stateful plant instance.
#[derive(Debug, Clone)]
pub struct Plant {
    pub params: PlantParams,
    pub state: PlantState,
}

impl Plant {
    pub fn new(params: PlantParams, state: PlantState) -> Result<Self, PlantError> {
        params.validate()?;
        state.check()?;
        Ok(Self { params, state })
    }

    pub fn advance(&mut self, inputs: &PlantInputs, dt: f64) -> Result<(), PlantError> {
        self.state = plant_step(&self.state, inputs, &self.params, dt)?;
        Ok(())
    }

    pub fn output(&self, current: f64) -> Result<(f64, f64), PlantError> {
        plant_output(&self.state, &PlantInputs::new(0.0, 0.0, current), &self.params)
    }

    /// Integrate with constant inputs until the rate norm drops below `tol`
    /// (atm/s), giving up after `max_time` seconds.
    pub fn settle(&mut self, inputs: &PlantInputs, tol: f64, max_time: f64) -> Result<f64, PlantError> {
        const CHUNK: f64 = 0.5;
        let mut t = 0.0;
        while t < max_time {
            if plant_derivative(&self.state, inputs, &self.params)?.norm() < tol {
                break;
            }
            self.advance(inputs, CHUNK)?;
            t += CHUNK;
        }
        Ok(t)
    }
}

/// Equilibrium reached from ambient conditions under constant `inputs`.
pub fn settled_state(params: &PlantParams, inputs: &PlantInputs) -> Result<PlantState, PlantError> {
    let mut plant = Plant::new(params.clone(), PlantState::ambient(params))?;
    plant.settle(inputs, 1e-12, 600.0)?;
    Ok(plant.state)
}
