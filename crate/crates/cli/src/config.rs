//! Experiment configuration file (TOML).
//!
//! ```toml
//! name = "demo"
//! oracle_noise = 0.0
//!
//! [data]
//! # path = "data/gtea"        # dataset root; omit to generate synthetic data
//! [data.synthetic]
//! num_videos = 60
//!
//! [loop]
//! rounds = 4
//! budget = "1.1%"
//! clip_strategy = "bact"
//! acquisition = "entropy"
//!
//! [sweep]
//! clip_lens = [0, 10, 20]
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use bact_core::acquisition::ClipStrategy;
use bact_core::active_loop::{LoopConfig, Quantity, SweepGrid, VideoStrategy};
use bact_core::dataset::{generate_synthetic, load_dataset, Dataset, SyntheticConfig};
use bact_core::uncertainty::AcquisitionFn;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment id; also the id under which `serve` exposes history.
    pub name: String,
    /// Label-flip rate of the simulated annotator.
    pub oracle_noise: f64,
    pub data: DataConfig,
    #[serde(rename = "loop")]
    pub active: LoopConfig,
    pub sweep: SweepGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            oracle_noise: 0.0,
            data: DataConfig::default(),
            active: LoopConfig::default(),
            sweep: SweepGrid::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root in the standard layout. Relative paths are resolved
    /// against the config file's directory.
    pub path: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

impl DataConfig {
    pub fn load(&self) -> anyhow::Result<Dataset> {
        match &self.path {
            Some(root) => load_dataset(root)
                .with_context(|| format!("loading dataset from {}", root.display())),
            None => generate_synthetic(&self.synthetic).context("generating synthetic data"),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub budget_pct: Option<f64>,
    pub strategy: Option<ClipStrategy>,
    pub video_strategy: Option<VideoStrategy>,
    pub acq_fn: Option<AcquisitionFn>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Reads `path`, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg =
            Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let (Some(data), Some(dir)) = (cfg.data.path.as_mut(), path.parent()) {
            if data.is_relative() {
                *data = dir.join(&*data);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> anyhow::Result<()> {
        if let Some(seed) = o.seed {
            self.active.seed = seed;
        }
        if let Some(pct) = o.budget_pct {
            if !(pct > 0.0 && pct.is_finite()) {
                bail!("--budget-pct must be positive, got {pct}");
            }
            self.active.budget = Quantity::Percent(pct);
        }
        if let Some(s) = o.strategy {
            self.active.clip_strategy = s;
        }
        if let Some(v) = o.video_strategy {
            self.active.video_strategy = v;
        }
        if let Some(a) = o.acq_fn {
            self.active.acquisition = a;
        }
        self.validate()
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(0.0..=1.0).contains(&self.oracle_noise) {
            bail!("oracle_noise must be in [0, 1], got {}", self.oracle_noise);
        }
        if self.name.is_empty() || self.name.contains('/') {
            bail!("experiment name must be non-empty and contain no '/'");
        }
        self.active.validate()?;
        Ok(())
    }
}
