//! Experiment configuration, read from TOML. Every section is optional.

use std::path::{Path, PathBuf};

use cddm::denoiser::{NetConfig, TrainConfig};
use cddm::diffusion::Schedule;
use cddm::operators::Geometry;
use cddm::pipeline::{CddmConfig, ConsistencyKind, Directions, Initializer};
use cddm::solvers::AdmmParams;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::phantom::PhantomKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// In-plane size `n × n`.
    pub size: usize,
    pub slices: usize,
    pub views: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            size: 32,
            slices: 8,
            views: 8,
        }
    }
}

impl GeometryConfig {
    pub fn dims(&self) -> [usize; 3] {
        [self.slices, self.size, self.size]
    }

    /// Unit voxels, `size` detector bins of unit width.
    pub fn geometry(&self, slices: usize) -> Result<Geometry> {
        Ok(Geometry::parallel(
            [slices, self.size, self.size],
            [1.0; 3],
            self.views,
            self.size,
            1.0,
        )?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<Schedule> {
        Ok(Schedule::linear(self.steps, self.beta_start, self.beta_end)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub channels: usize,
    pub blocks: usize,
    pub emb_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let d = NetConfig::default();
        NetworkConfig {
            channels: d.channels,
            blocks: d.blocks,
            emb_dim: d.emb_dim,
        }
    }
}

/// ADMM parameter profiles for the three places ADMM runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Profiles {
    /// Initial reconstruction and the ADMM-only baseline.
    pub low_quality: AdmmParams,
    /// Per-step consistency during sampling.
    pub consistency: AdmmParams,
    /// Per-sample 2D consistency during corrected training.
    pub training: AdmmParams,
}

impl Default for Profiles {
    fn default() -> Self {
        Profiles {
            low_quality: AdmmParams::new(0.1, 0.02, 1.0, 0.005, 250),
            consistency: AdmmParams::new(0.1, 0.02, 1.0, 0.01, 60),
            training: AdmmParams::new(0.1, 0.02, 1.0, 0.01, 60),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub t0: f64,
    pub infer_steps: usize,
    pub initializer: Initializer,
    pub directions: Directions,
    pub kind: ConsistencyKind,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            t0: 0.5,
            infer_steps: 50,
            initializer: Initializer::Admm,
            directions: Directions::Xyz,
            kind: ConsistencyKind::Specialized,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_kinds: Vec<PhantomKind>,
    pub train_phantoms: usize,
    pub eval_kind: PhantomKind,
    pub eval_phantoms: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_kinds: vec![PhantomKind::Shepp3d],
            train_phantoms: 40,
            eval_kind: PhantomKind::Shepp3d,
            eval_phantoms: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Split ADMM under the low-quality profile.
    Admm,
    /// Standard ADMM under the low-quality profile.
    AdmmStandard,
    CddmDmOff,
    CddmDmOn,
    /// DM on, consistency penalising `D_z` only.
    CddmZOnly,
    /// DM on, standard ADMM consistency.
    CddmStandard,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Admm => "admm",
            Method::AdmmStandard => "admm-standard",
            Method::CddmDmOff => "cddm-dm-off",
            Method::CddmDmOn => "cddm-dm-on",
            Method::CddmZOnly => "cddm-z-only",
            Method::CddmStandard => "cddm-standard",
        }
    }

    pub fn needs_network(self) -> bool {
        !matches!(self, Method::Admm | Method::AdmmStandard)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    /// Extra noise strengths run with the DM-on method.
    pub sweep_t0: Vec<f64>,
    /// Reuse trained networks instead of training.
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_dm: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: vec![Method::Admm, Method::CddmDmOff, Method::CddmDmOn],
            sweep_t0: Vec::new(),
            checkpoint: None,
            checkpoint_dm: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub schedule: ScheduleConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub train_dm: TrainConfig,
    pub profiles: Profiles,
    pub cddm: SamplerConfig,
    pub data: DataConfig,
    pub experiment: ExperimentConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            geometry: GeometryConfig::default(),
            schedule: ScheduleConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            train_dm: TrainConfig {
                steps: 2000,
                ..TrainConfig::default()
            },
            profiles: Profiles::default(),
            cddm: SamplerConfig::default(),
            data: DataConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

/// SplitMix64 finaliser over `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub mod tags {
    pub const TRAIN_PHANTOM: u64 = 1;
    pub const EVAL_PHANTOM: u64 = 2;
    pub const NET_INIT: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const TRAIN_DM: u64 = 5;
    pub const CELL: u64 = 6;
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|source| HarnessError::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Config::from_toml(&std::fs::read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let sched = self.schedule.build()?;
        self.geometry.geometry(self.geometry.slices)?;
        self.train.validate()?;
        self.train_dm.validate()?;
        for p in [&self.profiles.low_quality, &self.profiles.consistency, &self.profiles.training] {
            p.validate()?;
        }
        self.sampler(true).validate(&sched)?;
        for &t0 in &self.experiment.sweep_t0 {
            CddmConfig {
                t0,
                ..self.sampler(true)
            }
            .validate(&sched)?;
        }
        if self.experiment.methods.is_empty() {
            return Err(HarnessError::Config("experiment lists no methods".into()));
        }
        if self.data.train_kinds.is_empty() || self.data.train_phantoms == 0 {
            return Err(HarnessError::Config("training set is empty".into()));
        }
        if self.data.eval_phantoms == 0 {
            return Err(HarnessError::Config("no evaluation phantoms".into()));
        }
        Ok(())
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            channels: self.network.channels,
            blocks: self.network.blocks,
            emb_dim: self.network.emb_dim,
            timesteps: self.schedule.steps,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, tags::TRAIN, self.train.seed),
            ..self.train.clone()
        }
    }

    pub fn train_dm_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, tags::TRAIN_DM, self.train_dm.seed),
            ..self.train_dm.clone()
        }
    }

    /// Sampler settings with the given DM switch.
    pub fn sampler(&self, dm_enabled: bool) -> CddmConfig {
        CddmConfig {
            t0: self.cddm.t0,
            infer_steps: self.cddm.infer_steps,
            dm_enabled,
            low_quality: self.profiles.low_quality.clone(),
            consistency: self.profiles.consistency.clone(),
            directions: self.cddm.directions,
            kind: self.cddm.kind,
            initializer: self.cddm.initializer.clone(),
        }
    }
}
