use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::trace::Trace;
use super::HarnessError;

/// Half-width of the settling band around the reference, V.
pub const SETTLING_BAND: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSettling {
    pub event: f64,
    /// Seconds from the event until the voltage enters the band for good
    /// (up to the next event); `None` if it never does.
    pub settling_time: Option<f64>,
    /// Largest `|V - reference|` after settling.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub controller: String,
    /// Largest `V - reference` before the first event.
    pub startup_overshoot: f64,
    pub settling: Vec<EventSettling>,
    pub max_p_h2: f64,
    /// `∫|V - reference| dt`, V·s.
    pub iae: f64,
    pub limit_violations: usize,
    /// Total time above the pressure limit, s.
    pub violation_time: f64,
    /// Longest contiguous stretch above the limit, s.
    pub longest_violation: f64,
    pub max_exceedance: f64,
    pub degraded_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub reference: f64,
    pub p_h2_max: f64,
    pub controllers: Vec<Metrics>,
}

pub fn metrics(trace: &Trace, scenario: &Scenario, p_h2_max: f64) -> Metrics {
    let rows = &trace.rows;
    let dt = trace.meta.dt;
    let r = scenario.reference;
    let first_event = scenario.events.first().copied().unwrap_or(f64::INFINITY);
    let startup_overshoot = rows.iter().filter(|x| x.t < first_event).map(|x| x.v_true - r).fold(f64::NEG_INFINITY, f64::max);

    let mut settling = Vec::new();
    for (k, &event) in scenario.events.iter().enumerate() {
        let end = scenario.events.get(k + 1).copied().unwrap_or(f64::INFINITY);
        let window: Vec<_> = rows.iter().filter(|x| x.t >= event && x.t < end).collect();
        // Last sample outside the band; settled from the next one on.
        let last_out = window.iter().rposition(|x| (x.v_true - r).abs() >= SETTLING_BAND);
        let settled_from = match last_out {
            None => Some(0),
            Some(i) if i + 1 < window.len() => Some(i + 1),
            Some(_) => None,
        };
        let entry = match settled_from {
            Some(i) if !window.is_empty() => EventSettling {
                event,
                settling_time: Some(window[i].t - event),
                residual: Some(window[i..].iter().map(|x| (x.v_true - r).abs()).fold(0.0, f64::max)),
            },
            _ => EventSettling { event, settling_time: None, residual: None },
        };
        settling.push(entry);
    }

    let mut limit_violations = 0;
    let mut run = 0usize;
    let mut longest = 0usize;
    for x in rows {
        if x.p_true > p_h2_max {
            limit_violations += 1;
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    Metrics {
        controller: trace.meta.controller.clone(),
        startup_overshoot,
        settling,
        max_p_h2: rows.iter().map(|x| x.p_true).fold(f64::NEG_INFINITY, f64::max),
        iae: rows.iter().map(|x| (x.v_true - r).abs() * dt).sum(),
        limit_violations,
        violation_time: limit_violations as f64 * dt,
        longest_violation: longest as f64 * dt,
        max_exceedance: rows.iter().map(|x| x.p_true - p_h2_max).fold(0.0, f64::max),
        degraded_steps: rows.iter().filter(|x| x.status != "solved").count(),
    }
}

/// Metrics of several runs of the same scenario.
pub fn compare(traces: &[&Trace], scenario: &Scenario, p_h2_max: f64) -> Result<ComparisonReport, HarnessError> {
    for t in traces {
        if t.meta.scenario != scenario.name {
            return Err(HarnessError::Config(format!(
                "trace of scenario `{}` cannot be compared on `{}`",
                t.meta.scenario, scenario.name
            )));
        }
        if t.meta.scenario_seed != scenario.seed {
            return Err(HarnessError::Config(format!(
                "trace `{}` used seed {} but the scenario seed is {}",
                t.meta.controller, t.meta.scenario_seed, scenario.seed
            )));
        }
    }
    if let Some(first) = traces.first() {
        if traces.iter().any(|t| t.rows.len() != first.rows.len()) {
            return Err(HarnessError::Config("traces have different lengths".into()));
        }
    }
    Ok(ComparisonReport {
        scenario: scenario.name.clone(),
        reference: scenario.reference,
        p_h2_max,
        controllers: traces.iter().map(|t| metrics(t, scenario, p_h2_max)).collect(),
    })
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} (reference {} V, P_H2 limit {} atm)", self.scenario, self.reference, self.p_h2_max);
        let _ = writeln!(
            s,
            "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>9}  settling (s)",
            "controller", "overshoot", "max P_H2", "IAE", "viol.", "longest", "degraded"
        );
        for m in &self.controllers {
            let settle: Vec<String> = m
                .settling
                .iter()
                .map(|e| match e.settling_time {
                    Some(t) => format!("{:.0}s:{t:.1}", e.event),
                    None => format!("{:.0}s:never", e.event),
                })
                .collect();
            let _ = writeln!(
                s,
                "{:<10} {:>10.4} {:>10.4} {:>10.3} {:>9.1}s {:>9.1}s {:>9}  {}",
                m.controller,
                m.startup_overshoot,
                m.max_p_h2,
                m.iae,
                m.violation_time,
                m.longest_violation,
                m.degraded_steps,
                settle.join(" ")
            );
        }
        s
    }
}
