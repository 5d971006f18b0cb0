use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scenario::Scenario;
use super::HarnessError;
use crate::datagen::DatagenConfig;
use crate::mpc::MpcConfig;
use crate::nn::{Network, TrainConfig};
use crate::plant::PlantParams;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    NnMpc,
    PlantMpc,
    /// Flows held at their initial values.
    OpenLoop,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::NnMpc => "nn-mpc",
            ControllerKind::PlantMpc => "plant-mpc",
            ControllerKind::OpenLoop => "open-loop",
        }
    }

    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "nn-mpc" => Ok(Self::NnMpc),
            "plant-mpc" => Ok(Self::PlantMpc),
            "open-loop" => Ok(Self::OpenLoop),
            _ => Err(HarnessError::Config(format!("unknown controller `{s}` (nn-mpc, plant-mpc, open-loop)"))),
        }
    }
}

/// File-level settings of a run. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Scenario file; the built-in `step` scenario when absent.
    pub scenario: Option<PathBuf>,
    pub controller: ControllerKind,
    pub dataset: PathBuf,
    pub weights: PathBuf,
    pub output_dir: PathBuf,
    /// Write wall-clock solve times to the trace. Off by default because it
    /// makes traces differ between runs.
    pub record_timing: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            scenario: None,
            controller: ControllerKind::NnMpc,
            dataset: "out/dataset.csv".into(),
            weights: "out/weights.json".into(),
            output_dir: "out".into(),
            record_timing: false,
        }
    }
}

/// Complete configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    #[serde(default)]
    pub plant: PlantParams,
    #[serde(default)]
    pub datagen: DatagenConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub run: RunSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            plant: PlantParams::default(),
            datagen: DatagenConfig::default(),
            train: TrainConfig::default(),
            mpc: MpcConfig::default(),
            run: RunSection::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Config = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(s) = cfg.run.scenario.as_mut() {
            resolve(s);
        }
        resolve(&mut cfg.run.dataset);
        resolve(&mut cfg.run.weights);
        resolve(&mut cfg.run.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.version != CONFIG_VERSION {
            return Err(HarnessError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.plant.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.datagen.bounds.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.mpc.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if (self.mpc.dt - self.datagen.dt).abs() > 1e-12 {
            return Err(HarnessError::Config(format!(
                "mpc.dt = {} must equal datagen.dt = {}: the model predicts one sampling interval ahead",
                self.mpc.dt, self.datagen.dt
            )));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario, HarnessError> {
        match &self.run.scenario {
            Some(p) => Scenario::load(p),
            None => Ok(Scenario::step()),
        }
    }

    /// SHA-256 over the canonical JSON form of the configuration and the
    /// scenario it runs.
    pub fn hash(&self, scenario: &Scenario) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            plant: &'a PlantParams,
            datagen: &'a DatagenConfig,
            train: &'a TrainConfig,
            mpc: &'a MpcConfig,
            scenario: &'a Scenario,
        }
        let canonical = serde_json::to_string(&Hashed {
            plant: &self.plant,
            datagen: &self.datagen,
            train: &self.train,
            mpc: &self.mpc,
            scenario,
        })
        .expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Everything one closed-loop run needs, already loaded.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub plant: PlantParams,
    pub mpc: MpcConfig,
    pub scenario: Scenario,
    pub controller: ControllerKind,
    /// Required for [`ControllerKind::NnMpc`].
    pub network: Option<Network>,
    pub record_timing: bool,
    pub config_hash: String,
    pub datagen_seed: u64,
    pub train_seed: u64,
}

impl RunConfig {
    pub fn new(config: &Config, scenario: Scenario, controller: ControllerKind, network: Option<Network>) -> Self {
        Self {
            plant: config.plant.clone(),
            mpc: config.mpc.clone(),
            config_hash: config.hash(&scenario),
            scenario,
            controller,
            network,
            record_timing: config.run.record_timing,
            datagen_seed: config.datagen.seed,
            train_seed: config.train.seed,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.plant.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.mpc.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.scenario.validate()?;
        if self.controller == ControllerKind::NnMpc && self.network.is_none() {
            return Err(HarnessError::Config("nn-mpc needs trained weights".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = Config::from_toml("version = 1\n").unwrap();
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        assert!(Config::from_toml("version = 2\n").is_err());
        assert!(Config::from_toml("version = 1\n[mpc]\nhorizon = 3\n").is_err());
        assert!(Config::from_toml("version = 1\n[mpc]\nh_u = 50\n").is_err());
    }

    #[test]
    fn overrides_and_hash() {
        let cfg = Config::from_toml("version = 1\n[mpc]\nrho = 1e7\n[run]\ncontroller = \"plant-mpc\"\n").unwrap();
        assert_eq!(cfg.mpc.rho, 1e7);
        assert_eq!(cfg.run.controller, ControllerKind::PlantMpc);
        let s = Scenario::step();
        assert_ne!(cfg.hash(&s), Config::default().hash(&s));
        assert_eq!(cfg.hash(&s), cfg.clone().hash(&s));
        assert_eq!(cfg.hash(&s).len(), 64);
    }

    #[test]
    fn default_round_trips_through_toml() {
        let text = toml::to_string(&Config::default()).unwrap();
        assert_eq!(Config::from_toml(&text).unwrap(), Config::default());
    }
}
