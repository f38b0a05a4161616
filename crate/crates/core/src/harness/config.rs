//! Experiment configuration (JSON) and scenario presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::GenSpec;
use crate::domain::{ChannelParams, FlTask, UavHardware};
use crate::error::{Error, Result};
use crate::learning::ModelSpec;
use crate::similarity::{DiversityMode, SsimParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    Scenario1,
    Scenario2,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Population {
    pub uavs: usize,
    pub cohort_size: usize,
    pub per_subregion_quota: usize,
    pub subregions: usize,
    pub n_rounds_max: usize,
}

impl Scenario {
    pub fn preset(self) -> Option<Population> {
        match self {
            Scenario::Scenario1 => Some(Population {
                uavs: 40,
                cohort_size: 10,
                per_subregion_quota: 1,
                subregions: 10,
                n_rounds_max: 200,
            }),
            Scenario::Scenario2 => Some(Population {
                uavs: 100,
                cohort_size: 20,
                per_subregion_quota: 2,
                subregions: 10,
                n_rounds_max: 200,
            }),
            Scenario::Custom => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategySpec {
    Deeps {
        ssim_threshold: f64,
    },
    Random,
    /// Exhaustive search; only for populations of at most 20 UAVs.
    Oracle {
        ssim_threshold: f64,
    },
}

impl StrategySpec {
    /// Short name used for output files and tables.
    pub fn label(&self) -> String {
        match self {
            StrategySpec::Deeps { ssim_threshold } => format!("deeps_th{ssim_threshold}"),
            StrategySpec::Random => "random".into(),
            StrategySpec::Oracle { ssim_threshold } => format!("oracle_th{ssim_threshold}"),
        }
    }

    pub fn ssim_threshold(&self) -> Option<f64> {
        match *self {
            StrategySpec::Deeps { ssim_threshold } | StrategySpec::Oracle { ssim_threshold } => {
                Some(ssim_threshold)
            }
            StrategySpec::Random => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiversityConfig {
    pub mode: DiversityMode,
    pub max_pairs: usize,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self {
            mode: DiversityMode::Pairwise,
            max_pairs: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub subregion: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    /// Side of the square operating area, centred on the origin.
    pub area_side_m: f64,
    pub uav_altitude_m: f64,
    pub bs_altitude_m: f64,
    /// Explicit UAV placements, one per UAV in id order. Overrides the grid.
    pub placements: Option<Vec<Placement>>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            area_side_m: 1000.0,
            uav_altitude_m: 100.0,
            bs_altitude_m: 30.0,
            placements: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatteryConfig {
    pub initial_min_j: f64,
    pub initial_max_j: f64,
    pub capacity_j: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            initial_min_j: 1e3,
            initial_max_j: 1e4,
            capacity_j: 1e4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub window: usize,
    pub tolerance: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            window: 10,
            tolerance: 0.005,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    #[default]
    Synthetic,
    /// Images listed in a `path,label,subregion,uav` manifest. UAV ids in
    /// the manifest must be `1..=N`.
    Manifest {
        path: PathBuf,
        image_root: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Required for `custom`; overrides the preset otherwise.
    pub population: Option<Population>,
    pub strategy: StrategySpec,
    /// Strategies run by `compare`.
    pub compare: Vec<StrategySpec>,
    pub xi: f64,
    pub epochs_per_round: usize,
    pub param_size_bits: u32,
    pub channel: ChannelParams,
    pub hardware: UavHardware,
    pub ssim: SsimParams,
    pub diversity: DiversityConfig,
    pub model: ModelSpec,
    pub generator: GenSpec,
    pub data: DataSource,
    pub geometry: GeometryConfig,
    pub battery: BatteryConfig,
    pub convergence: ConvergenceConfig,
    pub stop_on_convergence: bool,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Scenario1,
            population: None,
            strategy: StrategySpec::Deeps {
                ssim_threshold: 0.5,
            },
            compare: vec![
                StrategySpec::Deeps {
                    ssim_threshold: 0.1,
                },
                StrategySpec::Deeps {
                    ssim_threshold: 0.5,
                },
                StrategySpec::Random,
            ],
            xi: 0.5,
            epochs_per_round: 1,
            param_size_bits: 32,
            channel: ChannelParams::default(),
            hardware: UavHardware::default(),
            ssim: SsimParams::default(),
            diversity: DiversityConfig::default(),
            model: ModelSpec::default(),
            generator: GenSpec::default(),
            data: DataSource::Synthetic,
            geometry: GeometryConfig::default(),
            battery: BatteryConfig::default(),
            convergence: ConvergenceConfig::default(),
            stop_on_convergence: false,
            master_seed: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text)
    }

    pub fn population(&self) -> Result<Population> {
        self.population
            .or_else(|| self.scenario.preset())
            .ok_or_else(|| Error::Config("scenario `custom` needs a `population` block".into()))
    }

    /// The FL task for a given strategy.
    pub fn task(&self, strategy: &StrategySpec) -> Result<FlTask> {
        let pop = self.population()?;
        Ok(FlTask {
            n_rounds_max: pop.n_rounds_max,
            cohort_size: pop.cohort_size,
            per_subregion_quota: pop.per_subregion_quota,
            xi: self.xi,
            // Random selection never deduplicates; any valid value will do.
            ssim_threshold: strategy.ssim_threshold().unwrap_or(0.5),
            epochs_per_round: self.epochs_per_round,
            param_count: self.model.param_count(),
            param_size_bits: self.param_size_bits,
        })
    }

    /// Side of the square images fed to the model.
    pub fn image_side(&self) -> Result<u32> {
        let side = (self.model.input_dim as f64).sqrt().round() as usize;
        if side * side != self.model.input_dim {
            return Err(Error::Config(format!(
                "model.input_dim {} is not a square image size",
                self.model.input_dim
            )));
        }
        Ok(side as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let pop = self.population()?;
        if pop.subregions == 0 || pop.uavs == 0 {
            return Err(Error::Config("population sizes must be positive".into()));
        }
        for s in std::iter::once(&self.strategy).chain(&self.compare) {
            self.task(s)?.validate()?;
        }
        if self.task(&self.strategy)?.subregion_count() != pop.subregions {
            return Err(Error::Config(format!(
                "cohort_size {} must equal quota {} x {} sub-regions",
                pop.cohort_size, pop.per_subregion_quota, pop.subregions
            )));
        }
        self.channel.validate()?;
        self.hardware.validate()?;
        self.ssim.validate()?;
        self.model.validate()?;
        self.generator.validate()?;
        let side = self.image_side()?;
        if matches!(self.data, DataSource::Synthetic) && side != self.generator.image_side {
            return Err(Error::Config(format!(
                "generator.image_side {} does not match model input {}x{side}",
                self.generator.image_side, side
            )));
        }
        if self.diversity.max_pairs == 0 {
            return Err(Error::Config("diversity.max_pairs must be >= 1".into()));
        }
        let b = &self.battery;
        if !(0.0 <= b.initial_min_j
            && b.initial_min_j <= b.initial_max_j
            && b.initial_max_j <= b.capacity_j)
        {
            return Err(Error::Config(
                "need 0 <= initial_min_j <= initial_max_j <= capacity_j".into(),
            ));
        }
        if self.convergence.window < 2 || !(self.convergence.tolerance > 0.0) {
            return Err(Error::Config(
                "convergence window must be >= 2, tolerance > 0".into(),
            ));
        }
        let g = &self.geometry;
        if !(g.area_side_m > 0.0 && g.uav_altitude_m >= 0.0 && g.bs_altitude_m >= 0.0) {
            return Err(Error::Config("geometry sizes must be positive".into()));
        }
        if let Some(p) = &g.placements {
            if p.len() != pop.uavs {
                return Err(Error::Config(format!(
                    "{} placements given for {} UAVs",
                    p.len(),
                    pop.uavs
                )));
            }
        }
        Ok(())
    }

    /// Canonical JSON of the effective configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`Self::canonical_json`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
