//! Training corpus generation.
//!
//! Inputs are drawn by Latin hypercube sampling over the actuator and load
//! ranges. Each sample becomes one recorded transition `(u_k, x_k, x_k+1)`:
//! the plant is first driven from the nominal equilibrium through a random
//! number of random-input warm-up steps, then the sampled inputs are held
//! for one interval.
//!
//! Voltages are measured under the current of the interval they start, so
//! `x_k` and `x_k+1` in a record share the load `u_k[2]`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{self, NoiseStd, PlantError, PlantInputs, PlantParams, PlantState};

pub const DATASET_HEADER: &str = "qh2,qair,i,v0,p0,v1,p1";
const META_FORMAT: &str = "fcmpc-dataset";
const META_VERSION: u32 = 1;
/// Collection aborts when more than this fraction of samples fail.
pub const MAX_SKIP_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid sample bounds: {0}")]
    Bounds(String),
    #[error("{skipped} of {total} samples failed to integrate (last error: {last})")]
    TooManySkips { skipped: usize, total: usize, last: PlantError },
    #[error("plant: {0}")]
    Plant(#[from] PlantError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed dataset {path} line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("dataset metadata: {0}")]
    Meta(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatagenError + '_ {
    move |source| DatagenError::Io { path: path.to_path_buf(), source }
}

/// Per-dimension `(low, high)` ranges of `[q_h2 (lpm), q_air (lpm), current (A)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleBounds {
    pub q_h2: (f64, f64),
    pub q_air: (f64, f64),
    pub current: (f64, f64),
}

impl Default for SampleBounds {
    fn default() -> Self {
        Self { q_h2: (100.0, 400.0), q_air: (300.0, 700.0), current: (60.0, 180.0) }
    }
}

impl SampleBounds {
    pub fn dims(&self) -> [(f64, f64); 3] {
        [self.q_h2, self.q_air, self.current]
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        for (name, (lo, hi)) in ["q_h2", "q_air", "current"].iter().zip(self.dims()) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(DatagenError::Bounds(format!("{name}: ({lo}, {hi})")));
            }
            if lo < 0.0 {
                return Err(DatagenError::Bounds(format!("{name}: negative lower bound {lo}")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, u: &[f64; 3]) -> bool {
        self.dims().iter().zip(u).all(|(&(lo, hi), &x)| x >= lo && x <= hi)
    }

    fn uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 3] {
        self.dims().map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
    }
}

/// Latin hypercube sample of `n` points in the box.
///
/// For each dimension the range is cut into `n` equal strata, the strata are
/// assigned to points by an independent random permutation and each point is
/// placed uniformly inside its stratum.
pub fn lhs_sample<R: Rng + ?Sized>(n: usize, bounds: &SampleBounds, rng: &mut R) -> Vec<[f64; 3]> {
    assert!(n >= 1, "lhs_sample needs at least one point");
    let mut points = vec![[0.0; 3]; n];
    for (d, (lo, hi)) in bounds.dims().into_iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        let width = (hi - lo) / n as f64;
        for (point, stratum) in points.iter_mut().zip(strata) {
            let offset: f64 = rng.random();
            // Keep the point inside its stratum even when rounding pushes
            // `lo + (k + offset) * width` onto the next edge.
            let x = lo + (stratum as f64 + offset) * width;
            let upper = if stratum + 1 == n { hi } else { lo + (stratum + 1) as f64 * width };
            point[d] = x.min(upper).max(lo + stratum as f64 * width);
        }
    }
    points
}

/// One recorded transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// `[q_h2, q_air, current]`
    pub u: [f64; 3],
    /// `[v_fc, p_h2]` measured at the start of the interval.
    pub x: [f64; 2],
    /// `[v_fc, p_h2]` measured one interval later.
    pub x_next: [f64; 2],
}

impl Record {
    /// Network input `[q_h2, q_air, i, v, p]`.
    pub fn input(&self) -> [f64; 5] {
        [self.u[0], self.u[1], self.u[2], self.x[0], self.x[1]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    pub dt: f64,
    pub seed: u64,
    pub bounds: SampleBounds,
    pub noise_std: NoiseStd,
    pub records: usize,
    pub skipped: usize,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub meta: DatasetMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenConfig {
    pub samples: usize,
    pub seed: u64,
    pub dt: f64,
    pub bounds: SampleBounds,
    pub noise_std: NoiseStd,
    /// Record noiseless transitions regardless of `noise_std`.
    pub noiseless: bool,
    /// Inclusive range for the number of warm-up steps before each record.
    pub warmup_steps: (usize, usize),
    /// Inputs the warm-up starts from (settled equilibrium).
    pub start_inputs: PlantInputs,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            seed: 20_220_617,
            dt: 0.5,
            bounds: SampleBounds::default(),
            noise_std: NoiseStd::default(),
            noiseless: false,
            warmup_steps: (5, 50),
            start_inputs: PlantInputs::new(250.0, 500.0, 125.0),
        }
    }
}

impl DatagenConfig {
    pub fn effective_noise(&self) -> NoiseStd {
        if self.noiseless {
            NoiseStd::ZERO
        } else {
            self.noise_std
        }
    }
}

/// Per-sample random stream. Derived only from the run seed and the sample
/// index, so sharding samples across workers gives identical records.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Record one transition per sample point.
pub fn collect(
    params: &PlantParams,
    samples: &[[f64; 3]],
    config: &DatagenConfig,
) -> Result<Dataset, DatagenError> {
    params.validate()?;
    config.bounds.validate()?;
    if let Some(bad) = samples.iter().find(|u| !config.bounds.contains(u)) {
        return Err(DatagenError::Bounds(format!("sample {bad:?} outside {:?}", config.bounds)));
    }
    let noise = config.effective_noise();
    let start = plant::settled_state(params, &config.start_inputs)?;

    let mut records = Vec::with_capacity(samples.len());
    let mut skipped = 0;
    let mut last_err = None;
    for (i, u) in samples.iter().enumerate() {
        let mut rng = sample_rng(config.seed, i);
        match transition(params, start, u, config, &noise, &mut rng) {
            Ok(r) => records.push(r),
            Err(e) => {
                skipped += 1;
                last_err = Some(e);
            }
        }
    }
    if skipped as f64 > MAX_SKIP_FRACTION * samples.len() as f64 {
        return Err(DatagenError::TooManySkips {
            skipped,
            total: samples.len(),
            last: last_err.expect("skips imply an error"),
        });
    }
    let meta = DatasetMeta {
        format: META_FORMAT.into(),
        version: META_VERSION,
        dt: config.dt,
        seed: config.seed,
        bounds: config.bounds,
        noise_std: noise,
        records: records.len(),
        skipped,
        generator: generator_id(),
    };
    Ok(Dataset { records, meta })
}

fn transition(
    params: &PlantParams,
    start: PlantState,
    u: &[f64; 3],
    config: &DatagenConfig,
    noise: &NoiseStd,
    rng: &mut ChaCha8Rng,
) -> Result<Record, PlantError> {
    let (lo, hi) = config.warmup_steps;
    let warmup = rng.random_range(lo..=hi);
    let mut state = start;
    for _ in 0..warmup {
        let w = config.bounds.uniform(rng);
        state = plant::plant_step(&state, &PlantInputs::new(w[0], w[1], w[2]), params, config.dt)?;
    }
    let inputs = PlantInputs::new(u[0], u[1], u[2]);
    let before = plant::measure(plant::plant_output(&state, &inputs, params)?, noise, rng);
    let state = plant::plant_step(&state, &inputs, params, config.dt)?;
    let after = plant::measure(plant::plant_output(&state, &inputs, params)?, noise, rng);
    Ok(Record { u: *u, x: [before.v_fc, before.p_h2], x_next: [after.v_fc, after.p_h2] })
}

/// LHS over the configured bounds followed by [`collect`].
pub fn generate(params: &PlantParams, config: &DatagenConfig) -> Result<Dataset, DatagenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samples = lhs_sample(config.samples, &config.bounds, &mut rng);
    collect(params, &samples, config)
}

pub fn generator_id() -> String {
    format!("fcmpc {} ({})", env!("CARGO_PKG_VERSION"), env!("FCMPC_GIT_DESCRIBE"))
}

/// Deterministic train/validation split by seeded shuffle. Returns
/// `(train, validation)`.
pub fn split(records: &[Record], val_fraction: f64, seed: u64) -> (Vec<Record>, Vec<Record>) {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((records.len() as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(records.len().saturating_sub(1));
    let val = idx[..n_val].iter().map(|&i| records[i]).collect();
    let train = idx[n_val..].iter().map(|&i| records[i]).collect();
    (train, val)
}

/// Sidecar metadata path for a dataset CSV: `foo.csv` -> `foo.meta.json`.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

impl Dataset {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(DATASET_HEADER);
        out.push('\n');
        for r in &self.records {
            // `{}` on f64 prints the shortest representation that parses
            // back to the same value.
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.u[0], r.u[1], r.u[2], r.x[0], r.x[1], r.x_next[0], r.x_next[1]
            ));
        }
        out
    }

    pub fn save(&self, csv: &Path) -> Result<(), DatagenError> {
        if let Some(dir) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(csv, self.to_csv_string()).map_err(io_err(csv))?;
        let meta = meta_path(csv);
        let json = serde_json::to_string_pretty(&self.meta).map_err(|e| DatagenError::Meta(e.to_string()))?;
        let mut f = fs::File::create(&meta).map_err(io_err(&meta))?;
        writeln!(f, "{json}").map_err(io_err(&meta))?;
        Ok(())
    }

    pub fn load(csv: &Path) -> Result<Self, DatagenError> {
        let file = fs::File::open(csv).map_err(io_err(csv))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |line: usize, msg: String| DatagenError::Parse { path: csv.to_path_buf(), line, msg };
        match lines.next() {
            Some(Ok(h)) if h.trim() == DATASET_HEADER => {}
            Some(Ok(h)) => return Err(parse_err(1, format!("unexpected header `{h}`"))),
            Some(Err(e)) => return Err(DatagenError::Io { path: csv.to_path_buf(), source: e }),
            None => return Err(parse_err(1, "empty file".into())),
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(io_err(csv))?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| parse_err(i + 2, e.to_string()))?;
            if vals.len() != 7 {
                return Err(parse_err(i + 2, format!("expected 7 fields, found {}", vals.len())));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(i + 2, "non-finite value".into()));
            }
            records.push(Record {
                u: [vals[0], vals[1], vals[2]],
                x: [vals[3], vals[4]],
                x_next: [vals[5], vals[6]],
            });
        }
        let meta_file = meta_path(csv);
        let text = fs::read_to_string(&meta_file).map_err(io_err(&meta_file))?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| DatagenError::Meta(e.to_string()))?;
        if meta.format != META_FORMAT || meta.version != META_VERSION {
            return Err(DatagenError::Meta(format!(
                "unsupported dataset format {} v{}",
                meta.format, meta.version
            )));
        }
        if meta.records != records.len() {
            return Err(DatagenError::Meta(format!(
                "metadata lists {} records, file has {}",
                meta.records,
                records.len()
            )));
        }
        Ok(Self { records, meta })
    }
}
