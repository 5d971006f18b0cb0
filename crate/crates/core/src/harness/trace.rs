use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const TRACE_HEADER: &str = "t,i,v_true,v_meas,p_true,p_meas,qh2,qair,dqh2,dqair,slack,status,iters,ms";
const TRACE_META_FORMAT: &str = "fcmpc-trace-meta";

/// One control step of a closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub current: f64,
    pub v_true: f64,
    pub v_meas: f64,
    pub p_true: f64,
    pub p_meas: f64,
    pub q_h2: f64,
    pub q_air: f64,
    pub dq_h2: f64,
    pub dq_air: f64,
    pub slack: f64,
    /// QP status, `degraded:<status>` when flows were held, or `failed`.
    pub status: String,
    pub iters: usize,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub format: String,
    pub version: u32,
    pub scenario: String,
    pub controller: String,
    pub config_hash: String,
    pub scenario_seed: u64,
    pub datagen_seed: u64,
    pub train_seed: u64,
    pub dt: f64,
    pub rows: usize,
    /// Steps whose output clamp fired, with a description.
    pub anomalies: Vec<(usize, String)>,
    pub failure: Option<String>,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub meta: TraceMeta,
}

/// Fixed-format rendering shared by every writer so traces compare
/// byte-for-byte. Values are rounded half-to-even at the printed digit by
/// the standard formatter.
fn fixed(x: f64, digits: usize) -> String {
    let s = format!("{x:.digits$}");
    // "-0.000" and "0.000" are the same number.
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

impl TraceRow {
    fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fixed(self.t, 2),
            fixed(self.current, 4),
            fixed(self.v_true, 6),
            fixed(self.v_meas, 6),
            fixed(self.p_true, 6),
            fixed(self.p_meas, 6),
            fixed(self.q_h2, 6),
            fixed(self.q_air, 6),
            fixed(self.dq_h2, 6),
            fixed(self.dq_air, 6),
            fixed(self.slack, 9),
            self.status,
            self.iters,
            fixed(self.ms, 3),
        )
    }

    fn parse(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(format!("expected 14 fields, found {}", f.len()));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| format!("bad number `{}`", f[i]));
        Ok(Self {
            t: num(0)?,
            current: num(1)?,
            v_true: num(2)?,
            v_meas: num(3)?,
            p_true: num(4)?,
            p_meas: num(5)?,
            q_h2: num(6)?,
            q_air: num(7)?,
            dq_h2: num(8)?,
            dq_air: num(9)?,
            slack: num(10)?,
            status: f[11].to_string(),
            iters: f[12].parse().map_err(|_| format!("bad count `{}`", f[12]))?,
            ms: num(13)?,
        })
    }
}

impl TraceMeta {
    pub fn new(scenario: &str, controller: &str, dt: f64) -> Self {
        Self {
            format: TRACE_META_FORMAT.into(),
            version: 1,
            scenario: scenario.into(),
            controller: controller.into(),
            config_hash: String::new(),
            scenario_seed: 0,
            datagen_seed: 0,
            train_seed: 0,
            dt,
            rows: 0,
            anomalies: Vec::new(),
            failure: None,
            generator: crate::datagen::generator_id(),
        }
    }
}

impl Trace {
    pub fn to_csv_string(&self) -> String {
        let mut s = String::with_capacity(128 * (self.rows.len() + 1));
        s.push_str(TRACE_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.to_csv_line());
        }
        s
    }

    /// `<dir>/<scenario>_<controller>.csv`
    pub fn default_path(dir: &Path, scenario: &str, controller: &str) -> PathBuf {
        dir.join(format!("{scenario}_{controller}.csv"))
    }

    pub fn meta_path(csv: &Path) -> PathBuf {
        csv.with_extension("meta.json")
    }

    /// Write the CSV and its metadata sidecar.
    pub fn save(&self, csv: &Path) -> Result<(), HarnessError> {
        if let Some(dir) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        fs::write(csv, self.to_csv_string()).map_err(|e| HarnessError::io(csv, e))?;
        let meta_path = Self::meta_path(csv);
        let mut meta = serde_json::to_string_pretty(&self.meta).map_err(|e| HarnessError::Other(e.to_string()))?;
        meta.push('\n');
        fs::write(&meta_path, meta).map_err(|e| HarnessError::io(&meta_path, e))
    }

    /// Read a trace back. Values carry the printed precision.
    pub fn load(csv: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(csv).map_err(|e| HarnessError::io(csv, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(TRACE_HEADER) {
            return Err(HarnessError::Config(format!("{}: not a trace file (header mismatch)", csv.display())));
        }
        let rows = lines
            .enumerate()
            .map(|(i, l)| TraceRow::parse(l).map_err(|e| HarnessError::Config(format!("{}:{}: {e}", csv.display(), i + 2))))
            .collect::<Result<Vec<_>, _>>()?;
        let meta_path = Self::meta_path(csv);
        let meta = match fs::read_to_string(&meta_path) {
            Ok(t) => serde_json::from_str(&t).map_err(|e| HarnessError::Config(format!("{}: {e}", meta_path.display())))?,
            Err(_) => {
                // Without a sidecar, recover the names from the file name.
                let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
                let (scenario, controller) = stem.rsplit_once('_').unwrap_or((stem, "unknown"));
                let dt = if rows.len() > 1 { rows[1].t - rows[0].t } else { 0.5 };
                TraceMeta { rows: rows.len(), ..TraceMeta::new(scenario, controller, dt) }
            }
        };
        Ok(Self { rows, meta })
    }

    pub fn failed(&self) -> bool {
        self.meta.failure.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64) -> TraceRow {
        TraceRow {
            t,
            current: 125.0,
            v_true: 48.0123456789,
            v_meas: -0.0000001,
            p_true: 2.0,
            p_meas: 2.01,
            q_h2: 250.0,
            q_air: 500.0,
            dq_h2: 1.5,
            dq_air: -2.25,
            slack: 1e-10,
            status: "solved".into(),
            iters: 3,
            ms: 0.0,
        }
    }

    #[test]
    fn fixed_format() {
        let line = row(0.5).to_csv_line();
        assert_eq!(
            line,
            "0.50,125.0000,48.012346,0.000000,2.000000,2.010000,250.000000,500.000000,1.500000,-2.250000,0.000000000,solved,3,0.000"
        );
        assert_eq!(TRACE_HEADER.split(',').count(), line.split(',').count());
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("step_nn-mpc.csv");
        let trace = Trace { rows: vec![row(0.0), row(0.5)], meta: TraceMeta { rows: 2, ..TraceMeta::new("step", "nn-mpc", 0.5) } };
        trace.save(&path).unwrap();
        let back = Trace::load(&path).unwrap();
        assert_eq!(back.meta, trace.meta);
        assert_eq!(back.to_csv_string(), trace.to_csv_string());
    }
}
