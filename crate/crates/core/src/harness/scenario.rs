use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::plant::NoiseStd;

pub const SCENARIO_VERSION: u32 = 1;

/// Load profile and sensor setup of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    /// s
    pub duration: f64,
    /// V
    pub reference: f64,
    /// Seed of the measurement-noise stream.
    pub seed: u64,
    pub noise_std: NoiseStd,
    /// Initial `(q_h2, q_air)`; the plant starts settled at these flows and
    /// the initial current.
    pub initial_flows: [f64; 2],
    /// Times of the load events; settling is measured from each.
    #[serde(default)]
    pub events: Vec<f64>,
    /// Piecewise-linear current profile as `(time s, current A)` knots.
    pub knots: Vec<(f64, f64)>,
}

/// Currents outside this range are not covered by the training data.
pub const CURRENT_ENVELOPE: (f64, f64) = (60.0, 180.0);

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let s: Scenario =
            toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(format!("scenario `{}`: {m}", self.name)));
        if self.version != SCENARIO_VERSION {
            return bad(format!("version {} is not supported (expected {SCENARIO_VERSION})", self.version));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration = {}", self.duration));
        }
        if self.knots.is_empty() {
            return bad("no current knots".into());
        }
        if self.knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return bad("knot times must be strictly increasing".into());
        }
        if let Some(&(_, i)) = self.knots.iter().find(|k| !(k.1 >= CURRENT_ENVELOPE.0 && k.1 <= CURRENT_ENVELOPE.1)) {
            return bad(format!("current {i} A outside the calibrated envelope {CURRENT_ENVELOPE:?}"));
        }
        if self.events.windows(2).any(|w| !(w[1] > w[0])) || self.events.iter().any(|&e| !(e >= 0.0 && e <= self.duration)) {
            return bad("events must be increasing and inside the run".into());
        }
        if !(self.noise_std.voltage >= 0.0 && self.noise_std.pressure >= 0.0) {
            return bad("noise standard deviations must be nonnegative".into());
        }
        Ok(())
    }

    /// Current at time `t`, held constant outside the knot range.
    pub fn current(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((t0, i0), (t1, i1)) = (w[0], w[1]);
            if t <= t1 {
                return i0 + (i1 - i0) * (t - t0) / (t1 - t0);
            }
        }
        k[k.len() - 1].1
    }

    /// Number of control steps including `t = 0`.
    pub fn rows(&self, dt: f64) -> usize {
        (self.duration / dt).round() as usize + 1
    }

    /// Nominal step-disturbance profile: 125 A, up to 155 A at 25 s, down to
    /// 115 A at 75 s.
    pub fn step() -> Self {
        Self {
            version: SCENARIO_VERSION,
            name: "step".into(),
            duration: 150.0,
            reference: 48.0,
            seed: 11,
            noise_std: NoiseStd::default(),
            initial_flows: [100.0, 300.0],
            events: vec![25.0, 75.0],
            knots: vec![(0.0, 125.0), (24.5, 125.0), (25.0, 155.0), (74.5, 155.0), (75.0, 115.0), (150.0, 115.0)],
        }
    }

    /// Ramp up over 65–85 s, ramp back down over 110–130 s, then a step up
    /// at 140 s.
    pub fn ramp_step() -> Self {
        Self {
            version: SCENARIO_VERSION,
            name: "ramp-step".into(),
            duration: 210.0,
            reference: 48.0,
            seed: 12,
            noise_std: NoiseStd::default(),
            initial_flows: [100.0, 300.0],
            events: vec![65.0, 110.0, 140.0],
            knots: vec![
                (0.0, 125.0),
                (65.0, 125.0),
                (85.0, 155.0),
                (110.0, 155.0),
                (130.0, 125.0),
                (139.5, 125.0),
                (140.0, 155.0),
                (210.0, 155.0),
            ],
        }
    }
}
