use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GsddError, Result};
use crate::layout::{DistilledSet, Gaussian2D, PARAMS_PER_GAUSSIAN};
use crate::raster::cov_from_cholesky;

/// Spatial extent times opacity magnitude: `|alpha| * sqrt(det Sigma)`,
/// with `Sigma` in normalized units.
pub fn importance_score(g: &Gaussian2D) -> f64 {
    let cov = cov_from_cholesky(g.l11 as f64, g.l21 as f64, g.l22 as f64);
    (g.alpha as f64).abs() * cov.det.max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    LargeOpaqueFirst,
    SmallTransparentFirst,
    Random,
}

impl PruneMode {
    pub const ALL: [PruneMode; 3] = [
        Self::LargeOpaqueFirst,
        Self::SmallTransparentFirst,
        Self::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::LargeOpaqueFirst => "large_opaque_first",
            Self::SmallTransparentFirst => "small_transparent_first",
            Self::Random => "random",
        }
    }
}

impl std::str::FromStr for PruneMode {
    type Err = GsddError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| GsddError::Config(format!("unknown prune mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneStrategy {
    pub mode: PruneMode,
    /// Fraction of each image's Gaussians to remove.
    pub ratio: f64,
    /// Only used by [`PruneMode::Random`].
    pub seed: u64,
}

impl PruneStrategy {
    pub fn new(mode: PruneMode, ratio: f64) -> Self {
        Self {
            mode,
            ratio,
            seed: 0,
        }
    }

    /// Gaussians removed from each image of an `m`-Gaussian set.
    pub fn removed_per_image(&self, m: usize) -> Result<usize> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(GsddError::Config(format!(
                "prune ratio {} outside [0, 1]",
                self.ratio
            )));
        }
        Ok(((self.ratio * m as f64).floor() as usize).min(m))
    }
}

/// Removes the same number of Gaussians from every image. Survivors keep
/// their original order.
pub fn prune_dataset(set: &DistilledSet, strategy: &PruneStrategy) -> Result<DistilledSet> {
    let m = set.gaussians_per_image;
    let removed = strategy.removed_per_image(m)?;
    let keep = m - removed;
    let mut rng = ChaCha8Rng::seed_from_u64(strategy.seed);
    let mut params = Vec::with_capacity(set.num_images * keep * PARAMS_PER_GAUSSIAN);
    for i in 0..set.num_images {
        let mut order: Vec<usize> = (0..m).collect();
        match strategy.mode {
            PruneMode::Random => order.shuffle(&mut rng),
            mode => {
                let scores: Vec<f64> = (0..m)
                    .map(|k| importance_score(&set.gaussian(i, k)))
                    .collect();
                // removal order: highest score first for large_opaque_first
                order.sort_by(|&a, &b| {
                    let ord = scores[a].total_cmp(&scores[b]);
                    if mode == PruneMode::LargeOpaqueFirst {
                        ord.reverse()
                    } else {
                        ord
                    }
                });
            }
        }
        let mut survivors = order[removed..].to_vec();
        survivors.sort_unstable();
        let src = set.image_params(i);
        for k in survivors {
            params.extend_from_slice(&src[k * PARAMS_PER_GAUSSIAN..(k + 1) * PARAMS_PER_GAUSSIAN]);
        }
    }
    DistilledSet::from_parts(
        set.width,
        set.height,
        set.channels,
        keep,
        set.class_count,
        params,
        set.labels.clone(),
    )
}
