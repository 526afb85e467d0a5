//! Run configuration: defaults, TOML file, then command-line overrides.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use mrcae_core::bench::{VariantKind, VariantSpec};
use mrcae_core::datasets::{gen_drifting_modes, gen_two_modes, Grid, ModeParams};
use mrcae_core::optim::AdamConfig;
use mrcae_core::trainer::{TrainConfig, WidenSchedule};
use mrcae_core::SnapshotTensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Example {
    #[default]
    #[serde(rename = "modes2")]
    TwoModes,
    #[serde(rename = "modes2-drift")]
    DriftingModes,
}

impl Example {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "modes2" => Some(Example::TwoModes),
            "modes2-drift" => Some(Example::DriftingModes),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Example::TwoModes => "modes2",
            Example::DriftingModes => "modes2-drift",
        }
    }

    pub fn default_t_end(self) -> f64 {
        match self {
            Example::TwoModes => 8.0 * PI,
            Example::DriftingModes => 4.0 * PI,
        }
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub example: Example,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    /// End of the time window; the example's own default when absent.
    pub t_end: Option<f64>,
    pub modes: ModeParams,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { example: Example::TwoModes, nx: 127, ny: 127, nt: 500, t_end: None, modes: ModeParams::default() }
    }
}

impl GeneratorConfig {
    pub fn grid(&self) -> Grid {
        Grid {
            nx: self.nx,
            ny: self.ny,
            nt: self.nt,
            x_range: (-5.0, 5.0),
            y_range: (-5.0, 5.0),
            t_range: (0.0, self.t_end.unwrap_or_else(|| self.example.default_t_end())),
        }
    }

    pub fn generate(&self) -> Result<SnapshotTensor> {
        let grid = self.grid();
        Ok(match self.example {
            Example::TwoModes => gen_two_modes(&grid, &self.modes)?,
            Example::DriftingModes => gen_drifting_modes(&grid, &self.modes)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub omega: f64,
    /// Mask tolerance per level; `eps_tau · Var(level data)` when absent.
    pub eps: Option<Vec<f64>>,
    pub eps_tau: f64,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: Option<usize>,
    pub group_channels: usize,
    pub max_groups: usize,
    /// Explicit groups per level; mask-driven widening when absent.
    pub groups: Option<Vec<usize>>,
    pub init_noise: f64,
    pub freeze_lower: bool,
    pub early_stop_window: usize,
    pub early_stop_min_rel: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            omega: t.omega,
            eps: t.eps,
            eps_tau: t.eps_tau,
            max_epochs: t.max_epochs,
            learning_rate: t.adam.learning_rate,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            adam_epsilon: t.adam.epsilon,
            batch_size: t.batch_size,
            group_channels: t.group_channels,
            max_groups: t.max_groups,
            groups: None,
            init_noise: t.init_noise,
            freeze_lower: t.freeze_lower,
            early_stop_window: t.early_stop_window,
            early_stop_min_rel: t.early_stop_min_rel_decrease,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub levels: usize,
    /// Seeds weight initialisation and the train/val/test split.
    pub seed: u64,
    pub variant: VariantKind,
    pub generator: GeneratorConfig,
    pub train: TrainSection,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            levels: 3,
            seed: 0,
            variant: VariantKind::Pr,
            generator: GeneratorConfig::default(),
            train: TrainSection::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serialises")
    }

    /// The configuration minus output locations: two runs that differ only
    /// in where they write produce identical artifacts.
    pub fn reproducible(&self) -> RunConfig {
        RunConfig { paths: PathsConfig::default(), ..self.clone() }
    }

    /// SHA-256 of the canonical JSON form of [`RunConfig::reproducible`].
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_vec(&self.reproducible()).expect("run config always serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Leading 64 bits of [`RunConfig::hash_hex`].
    pub fn hash_u64(&self) -> u64 {
        u64::from_str_radix(&self.hash_hex()[..16], 16).expect("hex digest")
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let base = TrainConfig {
            omega: t.omega,
            eps: t.eps.clone(),
            eps_tau: t.eps_tau,
            max_epochs: t.max_epochs,
            adam: AdamConfig { learning_rate: t.learning_rate, beta1: t.beta1, beta2: t.beta2, epsilon: t.adam_epsilon },
            batch_size: t.batch_size,
            group_channels: t.group_channels,
            max_groups: t.max_groups,
            widen_schedule: match &t.groups {
                Some(g) => WidenSchedule::Explicit(g.clone()),
                None => WidenSchedule::Auto,
            },
            init_noise: t.init_noise,
            seed: self.seed,
            freeze_lower: t.freeze_lower,
            early_stop_window: t.early_stop_window,
            early_stop_min_rel_decrease: t.early_stop_min_rel,
            ..TrainConfig::default()
        };
        VariantSpec::new(self.variant, &base).config
    }

    /// Cheap checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        self.train_config().validate(self.levels).map_err(|e| Error::Config(e.to_string()))
    }
}
