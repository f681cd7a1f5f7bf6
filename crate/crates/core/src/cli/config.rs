//! Run configuration: a TOML file whose values are overridden by flags.
//! The resolved configuration is written next to every run's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{EvalSpec, PruneMode, RenderPath};
use crate::data::{
    load_cifar_binary, load_cifar_binary_raw, toy_blobs, ChannelStats, LabeledImageDataset,
};
use crate::error::{GsddError, Result};
use crate::layout::RenderConfig;
use crate::optim::TrainConfig;

pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Synthetic colored-blob classes, generated from the seed.
    #[default]
    Toy,
    Cifar10,
    Cifar100,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// CIFAR training batch files.
    pub train_paths: Vec<PathBuf>,
    /// CIFAR test batch files.
    pub test_paths: Vec<PathBuf>,
    pub toy_classes: usize,
    pub toy_size: usize,
    pub toy_train_per_class: usize,
    pub toy_test_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Toy,
            train_paths: Vec::new(),
            test_paths: Vec::new(),
            toy_classes: 2,
            toy_size: 16,
            toy_train_per_class: 100,
            toy_test_per_class: 200,
        }
    }
}

/// Anti-aliasing and tiling switches; geometry comes from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    pub prefilter: bool,
    pub ssaa_factor: usize,
    pub cutoff_sigma: f64,
    pub tile_size: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        let d = RenderConfig::new(1, 1, 1);
        Self {
            prefilter: d.prefilter,
            ssaa_factor: d.ssaa_factor,
            cutoff_sigma: d.cutoff_sigma,
            tile_size: d.tile_size,
        }
    }
}

impl RenderOptions {
    pub fn config(&self, width: usize, height: usize, channels: usize) -> RenderConfig {
        RenderConfig {
            width,
            height,
            channels,
            prefilter: self.prefilter,
            ssaa_factor: self.ssaa_factor,
            cutoff_sigma: self.cutoff_sigma,
            tile_size: self.tile_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub ipc: usize,
    pub gpc: usize,
    /// Explicit Gaussians per image for `fit`; derived from the budget when
    /// absent.
    pub gaussians_per_image: Option<usize>,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            ipc: 1,
            gpc: 10,
            gaussians_per_image: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub mode: PruneMode,
    pub ratio: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            mode: PruneMode::SmallTransparentFirst,
            ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub resolutions: Vec<usize>,
    pub batches: Vec<usize>,
    pub gaussians: Vec<usize>,
    pub paths: Vec<RenderPath>,
    pub runs: usize,
    pub warmups: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![32, 64, 128],
            batches: vec![8],
            gaussians: vec![170],
            paths: vec![RenderPath::Reference, RenderPath::Batched],
            runs: 5,
            warmups: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; required by every command that draws random numbers.
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub render: RenderOptions,
    pub budget: BudgetConfig,
    pub eval: EvalSpec,
    pub prune: PruneConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| GsddError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GsddError::Config(e.to_string()))
    }

    /// Writes the resolved configuration into `dir`.
    pub fn persist(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(RESOLVED_CONFIG_FILE);
        fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }

    /// Propagates the master seed into the component configurations.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.train.seed = seed;
        self.eval.seed = seed;
    }

    /// Normalized training split.
    pub fn load_train(&self) -> Result<LabeledImageDataset> {
        match self.data.source {
            DataSource::Toy => {
                let d = &self.data;
                toy_blobs(
                    d.toy_train_per_class,
                    d.toy_classes,
                    d.toy_size,
                    self.seed.unwrap_or(0),
                )?
                .normalized()
            }
            DataSource::Cifar10 => load_cifar_binary(&self.data.train_paths, 10),
            DataSource::Cifar100 => load_cifar_binary(&self.data.train_paths, 100),
        }
    }

    /// Test split normalized with the training statistics.
    pub fn load_test(&self, stats: &ChannelStats) -> Result<LabeledImageDataset> {
        let raw = match self.data.source {
            DataSource::Toy => {
                let d = &self.data;
                // distinct stream from the training split
                let seed = self.seed.unwrap_or(0) ^ 0x7e57_7e57_7e57_7e57;
                toy_blobs(d.toy_test_per_class, d.toy_classes, d.toy_size, seed)?
            }
            DataSource::Cifar10 => load_cifar_binary_raw(&self.data.test_paths, 10)?,
            DataSource::Cifar100 => load_cifar_binary_raw(&self.data.test_paths, 100)?,
        };
        Ok(raw.normalized_with(stats.clone()))
    }
}

/// Sidecar holding the normalization of the data a container was built
/// from: `<container>.stats.toml`.
pub fn stats_sidecar(container: &Path) -> PathBuf {
    let mut name = container.as_os_str().to_owned();
    name.push(".stats.toml");
    PathBuf::from(name)
}

pub fn save_stats(stats: &ChannelStats, container: &Path) -> Result<()> {
    let text = toml::to_string(stats).map_err(|e| GsddError::Config(e.to_string()))?;
    fs::write(stats_sidecar(container), text)?;
    Ok(())
}

/// Stats from the sidecar, or identity when it is absent.
pub fn load_stats(container: &Path, channels: usize) -> Result<ChannelStats> {
    let path = stats_sidecar(container);
    if !path.exists() {
        return Ok(ChannelStats::identity(channels));
    }
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| GsddError::Config(e.to_string()))
}
