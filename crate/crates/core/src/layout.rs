//! Domain types shared by every other module: the nine-scalar Gaussian
//! primitive, the flat distilled-set buffer, render geometry, tile
//! addressing and storage-budget arithmetic.
//!
//! Coordinates: Gaussian positions live in normalized `[-1, 1]` space. Pixel
//! `i` of a `W`-wide image has its center at normalized `2(i + 0.5)/W - 1`,
//! which maps to pixel-space coordinate `i`.

use serde::{Deserialize, Serialize};

use crate::error::{check_index, GsddError, Result};

/// Scalars per Gaussian in the flat parameter buffer.
pub const PARAMS_PER_GAUSSIAN: usize = 9;

/// Floor applied to the Cholesky diagonal before forming a covariance.
pub const CHOLESKY_FLOOR: f64 = 1e-6;

/// Default position clipping margin.
pub const DEFAULT_CLIP_EPS: f32 = 1e-3;

/// Field offsets inside one Gaussian's nine-scalar record.
pub mod field {
    pub const U: usize = 0;
    pub const V: usize = 1;
    pub const L11: usize = 2;
    pub const L21: usize = 3;
    pub const L22: usize = 4;
    pub const R: usize = 5;
    pub const G: usize = 6;
    pub const B: usize = 7;
    pub const ALPHA: usize = 8;
}

/// One splatting primitive.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Gaussian2D {
    pub u: f32,
    pub v: f32,
    pub l11: f32,
    pub l21: f32,
    pub l22: f32,
    pub r: f32,
    pub g: f32,
    pub b: f32,
    pub alpha: f32,
}

impl Gaussian2D {
    pub fn from_slice(p: &[f32]) -> Self {
        Self {
            u: p[field::U],
            v: p[field::V],
            l11: p[field::L11],
            l21: p[field::L21],
            l22: p[field::L22],
            r: p[field::R],
            g: p[field::G],
            b: p[field::B],
            alpha: p[field::ALPHA],
        }
    }

    pub fn to_array(&self) -> [f32; PARAMS_PER_GAUSSIAN] {
        [
            self.u, self.v, self.l11, self.l21, self.l22, self.r, self.g, self.b, self.alpha,
        ]
    }

    pub fn color(&self) -> [f32; 3] {
        [self.r, self.g, self.b]
    }
}

/// All Gaussians of all synthetic images in one contiguous buffer, ordered
/// image-major, then Gaussian-major, then field-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistilledSet {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub num_images: usize,
    pub gaussians_per_image: usize,
    pub class_count: usize,
    pub params: Vec<f32>,
    pub labels: Vec<usize>,
}

impl DistilledSet {
    /// Builds a set with every parameter zeroed.
    pub fn zeros(
        width: usize,
        height: usize,
        channels: usize,
        gaussians_per_image: usize,
        class_count: usize,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let n = labels.len();
        Self::from_parts(
            width,
            height,
            channels,
            gaussians_per_image,
            class_count,
            vec![0.0; n * gaussians_per_image * PARAMS_PER_GAUSSIAN],
            labels,
        )
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        channels: usize,
        gaussians_per_image: usize,
        class_count: usize,
        params: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let set = Self {
            width,
            height,
            channels,
            num_images: labels.len(),
            gaussians_per_image,
            class_count,
            params,
            labels,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(GsddError::Geometry("zero-sized image".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(GsddError::Geometry(format!(
                "unsupported channel count {}",
                self.channels
            )));
        }
        let expected = self.num_images * self.gaussians_per_image * PARAMS_PER_GAUSSIAN;
        if self.params.len() != expected {
            return Err(GsddError::Geometry(format!(
                "params length {} != {} images x {} gaussians x 9",
                self.params.len(),
                self.num_images,
                self.gaussians_per_image
            )));
        }
        if self.labels.len() != self.num_images {
            return Err(GsddError::Geometry("labels length != num_images".into()));
        }
        for &l in &self.labels {
            check_index("label", l, self.class_count)?;
        }
        Ok(())
    }

    pub fn total_gaussians(&self) -> usize {
        self.num_images * self.gaussians_per_image
    }

    pub fn gaussian(&self, image: usize, k: usize) -> Gaussian2D {
        let off = (image * self.gaussians_per_image + k) * PARAMS_PER_GAUSSIAN;
        Gaussian2D::from_slice(&self.params[off..off + PARAMS_PER_GAUSSIAN])
    }

    pub fn set_gaussian(&mut self, image: usize, k: usize, g: &Gaussian2D) {
        let off = (image * self.gaussians_per_image + k) * PARAMS_PER_GAUSSIAN;
        self.params[off..off + PARAMS_PER_GAUSSIAN].copy_from_slice(&g.to_array());
    }

    /// Parameter slice of one image.
    pub fn image_params(&self, image: usize) -> &[f32] {
        let stride = self.gaussians_per_image * PARAMS_PER_GAUSSIAN;
        &self.params[image * stride..(image + 1) * stride]
    }

    pub fn image_params_mut(&mut self, image: usize) -> &mut [f32] {
        let stride = self.gaussians_per_image * PARAMS_PER_GAUSSIAN;
        &mut self.params[image * stride..(image + 1) * stride]
    }

    /// Copy of a subset of images, in the given order.
    pub fn select(&self, images: &[usize]) -> Result<Self> {
        let mut params = Vec::with_capacity(images.len() * self.gaussians_per_image * 9);
        let mut labels = Vec::with_capacity(images.len());
        for &i in images {
            check_index("image", i, self.num_images)?;
            params.extend_from_slice(self.image_params(i));
            labels.push(self.labels[i]);
        }
        Self::from_parts(
            self.width,
            self.height,
            self.channels,
            self.gaussians_per_image,
            self.class_count,
            params,
            labels,
        )
    }
}

/// Output geometry and anti-aliasing switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub prefilter: bool,
    pub ssaa_factor: usize,
    /// Culling radius in standard deviations; `f64::INFINITY` disables culling.
    pub cutoff_sigma: f64,
    pub tile_size: usize,
}

impl RenderConfig {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            prefilter: true,
            ssaa_factor: 2,
            cutoff_sigma: 3.0,
            tile_size: 16,
        }
    }

    pub fn for_set(set: &DistilledSet) -> Self {
        Self::new(set.width, set.height, set.channels)
    }

    pub fn with_prefilter(mut self, on: bool) -> Self {
        self.prefilter = on;
        self
    }

    pub fn with_ssaa(mut self, factor: usize) -> Self {
        self.ssaa_factor = factor;
        self
    }

    pub fn with_cutoff(mut self, sigma: f64) -> Self {
        self.cutoff_sigma = sigma;
        self
    }

    pub fn with_tile_size(mut self, tile: usize) -> Self {
        self.tile_size = tile;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ssaa_factor < 1 {
            return Err(GsddError::Config("ssaa_factor must be >= 1".into()));
        }
        if !matches!(self.tile_size, 8 | 16 | 32) {
            return Err(GsddError::Config(format!(
                "tile_size {} not in {{8,16,32}}",
                self.tile_size
            )));
        }
        if self.cutoff_sigma.is_nan() || self.cutoff_sigma <= 0.0 {
            return Err(GsddError::Config("cutoff_sigma must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GsddError::Config("zero-sized render target".into()));
        }
        Ok(())
    }

    /// Fails unless the configuration is valid and matches the set geometry.
    pub fn check_against(&self, set: &DistilledSet) -> Result<()> {
        self.validate()?;
        if (self.width, self.height, self.channels) != (set.width, set.height, set.channels) {
            return Err(GsddError::Geometry(format!(
                "render target {}x{}x{} vs set {}x{}x{}",
                self.width, self.height, self.channels, set.width, set.height, set.channels
            )));
        }
        Ok(())
    }
}

/// Storage accounting that fixes the Gaussian count per image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub resolution: usize,
    pub channels: usize,
    pub ipc: usize,
    pub gpc: usize,
    pub bytes_per_param: usize,
}

/// Raw pixels are counted as 4-byte floats.
const RAW_BYTES_PER_VALUE: usize = 4;

impl BudgetSpec {
    pub fn new(resolution: usize, channels: usize, ipc: usize, gpc: usize) -> Self {
        Self {
            resolution,
            channels,
            ipc,
            gpc,
            bytes_per_param: 2,
        }
    }

    pub fn raw_bytes_per_class(&self) -> usize {
        self.resolution * self.resolution * self.channels * self.ipc * RAW_BYTES_PER_VALUE
    }

    pub fn gaussian_bytes_per_class(&self, m: usize) -> usize {
        self.gpc * m * PARAMS_PER_GAUSSIAN * self.bytes_per_param
    }
}

/// Gaussians per image such that `gpc` Gaussian images cost no more than
/// `ipc` raw images. With bf16 storage this is
/// `floor(res^2 * ch * ipc * 2 / (gpc * 9))`.
pub fn budget_points(spec: &BudgetSpec) -> Result<usize> {
    let BudgetSpec {
        resolution,
        channels,
        ipc,
        gpc,
        bytes_per_param,
    } = *spec;
    if resolution == 0 || channels == 0 || ipc == 0 || gpc == 0 || bytes_per_param == 0 {
        return Err(GsddError::Budget(format!(
            "all fields must be positive: {spec:?}"
        )));
    }
    let m = spec.raw_bytes_per_class() / (gpc * PARAMS_PER_GAUSSIAN * bytes_per_param);
    if m == 0 {
        return Err(GsddError::Budget(format!(
            "{gpc} images per class cannot hold one Gaussian each within {ipc} raw images"
        )));
    }
    Ok(m)
}

/// Tile addressing for a batch of images rendered as one flat workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileLayout {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub tiles_per_image: usize,
    pub batch: usize,
}

impl TileLayout {
    pub fn from_counts(tiles_x: usize, tiles_y: usize, batch: usize) -> Self {
        Self {
            tiles_x,
            tiles_y,
            tiles_per_image: tiles_x * tiles_y,
            batch,
        }
    }

    pub fn for_image(width: usize, height: usize, tile_size: usize, batch: usize) -> Self {
        Self::from_counts(width.div_ceil(tile_size), height.div_ceil(tile_size), batch)
    }

    pub fn total_tiles(&self) -> usize {
        self.batch * self.tiles_per_image
    }

    pub fn global_tile_id(&self, image: usize, local_tile: usize) -> Result<usize> {
        check_index("image", image, self.batch)?;
        check_index("local tile", local_tile, self.tiles_per_image)?;
        Ok(image * self.tiles_per_image + local_tile)
    }

    /// Inverse of [`TileLayout::global_tile_id`].
    pub fn decompose(&self, id: usize) -> Result<(usize, usize)> {
        check_index("global tile", id, self.total_tiles())?;
        Ok((id / self.tiles_per_image, id % self.tiles_per_image))
    }
}

/// Flat index of field 0 of Gaussian `k` of image `image`.
pub fn param_offset(image: usize, k: usize, gaussians_per_image: usize) -> Result<usize> {
    check_index("gaussian", k, gaussians_per_image)?;
    Ok((image * gaussians_per_image + k) * PARAMS_PER_GAUSSIAN)
}

pub fn normalized_to_pixel(u: f64, v: f64, width: usize, height: usize) -> (f64, f64) {
    (
        (u + 1.0) / 2.0 * width as f64 - 0.5,
        (v + 1.0) / 2.0 * height as f64 - 0.5,
    )
}

pub fn pixel_to_normalized(px: f64, py: f64, width: usize, height: usize) -> (f64, f64) {
    (
        2.0 * (px + 0.5) / width as f64 - 1.0,
        2.0 * (py + 0.5) / height as f64 - 1.0,
    )
}

/// Clamps every position into `[-1 + eps, 1 - eps]`. Other fields untouched.
pub fn clip_positions(set: &mut DistilledSet, eps: f32) {
    let lo = -1.0 + eps;
    let hi = 1.0 - eps;
    for g in set.params.chunks_exact_mut(PARAMS_PER_GAUSSIAN) {
        g[field::U] = g[field::U].clamp(lo, hi);
        g[field::V] = g[field::V].clamp(lo, hi);
    }
}
