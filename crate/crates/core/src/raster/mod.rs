//! Forward rendering of Gaussian sets.
//!
//! Two paths share the per-Gaussian math in this file: [`render_reference`]
//! evaluates every Gaussian at every sample on one thread, and
//! [`render_batched`] bins Gaussians into tiles addressed by a global tile id
//! and rasterizes all tiles of all images as one parallel workload.
//!
//! Pixel values are accumulated in `f64` and stored as `f32`.

mod reference;
mod tiled;

pub use reference::render_reference;
pub use tiled::{
    bin_splats, prepare_splats, render_batched, render_batched_with_stats, Binning,
    IntersectionRecord, RenderStats,
};
pub(crate) use tiled::{forward_tiled_f64, tile_rect};

use crate::error::{GsddError, Result};
use crate::layout::{field, normalized_to_pixel, RenderConfig, CHOLESKY_FLOOR};

/// Row-major, channel-minor image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

impl ImageBuffer {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            pixels: vec![0.0; width * height * channels],
        }
    }

    pub fn from_pixels(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<f32>,
    ) -> Result<Self> {
        if pixels.len() != width * height * channels {
            return Err(GsddError::Geometry(format!(
                "{} pixels for a {width}x{height}x{channels} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub(crate) fn from_f64(width: usize, height: usize, channels: usize, data: &[f64]) -> Self {
        Self {
            width,
            height,
            channels,
            pixels: data.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&x| x as f64).collect()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[self.index(x, y, c)]
    }

    pub fn same_geometry(&self, other: &ImageBuffer) -> bool {
        (self.width, self.height, self.channels) == (other.width, other.height, other.channels)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Largest `|a - b| / max(|b|, floor)` over all elements, with `self`
    /// as `a`. Infinite on a geometry mismatch.
    pub fn max_relative_error(&self, reference: &ImageBuffer, floor: f64) -> f64 {
        if !self.same_geometry(reference) {
            return f64::INFINITY;
        }
        self.pixels
            .iter()
            .zip(&reference.pixels)
            .map(|(&a, &b)| (a as f64 - b as f64).abs() / (b as f64).abs().max(floor))
            .fold(0.0, f64::max)
    }
}

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn inverse(&self) -> Sym2 {
        let det = self.det();
        Sym2::new(self.yy / det, -self.xy / det, self.xx / det)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let half_trace = 0.5 * (self.xx + self.yy);
        let disc = (half_trace * half_trace - self.det()).max(0.0);
        half_trace + disc.sqrt()
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.xx * x + self.xy * y, self.xy * x + self.yy * y)
    }
}

/// `L * L^T` together with its determinant and inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CholeskyCov {
    pub sigma: Sym2,
    pub det: f64,
    pub inverse: Sym2,
}

/// Diagonal entries pass through `max(|l|, delta)`.
pub(crate) fn floor_diag(l: f64) -> f64 {
    l.abs().max(CHOLESKY_FLOOR)
}

/// Derivative of [`floor_diag`]; zero inside the floored region.
pub(crate) fn floor_diag_slope(l: f64) -> f64 {
    if l.abs() > CHOLESKY_FLOOR {
        l.signum()
    } else {
        0.0
    }
}

pub fn cov_from_cholesky(l11: f64, l21: f64, l22: f64) -> CholeskyCov {
    let a = floor_diag(l11);
    let c = floor_diag(l22);
    let sigma = Sym2::new(a * a, a * l21, l21 * l21 + c * c);
    CholeskyCov {
        sigma,
        det: sigma.det(),
        inverse: sigma.inverse(),
    }
}

/// Box-filter variance of a unit pixel.
pub const PIXEL_BOX_VARIANCE: f64 = 1.0 / 12.0;

pub fn prefilter_cov(cov_px: Sym2) -> Sym2 {
    Sym2::new(
        cov_px.xx + PIXEL_BOX_VARIANCE,
        cov_px.xy,
        cov_px.yy + PIXEL_BOX_VARIANCE,
    )
}

/// Subpixel sample offsets on a regular `factor x factor` grid, x-major.
pub fn ssaa_offsets(factor: usize) -> Result<Vec<(f64, f64)>> {
    if factor == 0 {
        return Err(GsddError::Config("ssaa factor must be >= 1".into()));
    }
    let f = factor as f64;
    // (2t + 1)/(2f) - 1/2 written over a common denominator so that
    // mirrored offsets are exact negatives of each other.
    let axis: Vec<f64> = (0..factor)
        .map(|t| (2.0 * t as f64 + 1.0 - f) / (2.0 * f))
        .collect();
    Ok(axis
        .iter()
        .flat_map(|&dx| axis.iter().map(move |&dy| (dx, dy)))
        .collect())
}

/// A Gaussian prepared for rasterization, in pixel space.
#[derive(Debug, Clone, Copy)]
pub struct Splat {
    pub mean: (f64, f64),
    /// Rendering covariance (scaled, optionally prefiltered).
    pub cov: Sym2,
    /// Inverse of `cov`.
    pub conic: Sym2,
    pub color: [f64; 3],
    pub alpha: f64,
}

impl Splat {
    pub fn from_params<P: Copy + Into<f64>>(p: &[P], cfg: &RenderConfig) -> Self {
        let get = |f: usize| -> f64 { p[f].into() };
        let (mx, my) = normalized_to_pixel(get(field::U), get(field::V), cfg.width, cfg.height);
        let base = cov_from_cholesky(get(field::L11), get(field::L21), get(field::L22)).sigma;
        let (sx, sy) = pixel_scale(cfg);
        let mut cov = Sym2::new(base.xx * sx * sx, base.xy * sx * sy, base.yy * sy * sy);
        if cfg.prefilter {
            cov = prefilter_cov(cov);
        }
        Splat {
            mean: (mx, my),
            cov,
            conic: cov.inverse(),
            color: [get(field::R), get(field::G), get(field::B)],
            alpha: get(field::ALPHA),
        }
    }

    /// Unnormalized Gaussian response at a pixel-space sample.
    #[inline]
    pub fn response(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean.0;
        let dy = y - self.mean.1;
        let (ax, ay) = self.conic.apply(dx, dy);
        (-0.5 * (dx * ax + dy * ay)).exp()
    }

    /// Conservative half-extent of the culling box.
    pub fn radius(&self, cutoff_sigma: f64) -> f64 {
        if cutoff_sigma.is_infinite() {
            f64::INFINITY
        } else {
            cutoff_sigma * self.cov.max_eigenvalue().sqrt()
        }
    }
}

/// Normalized-to-pixel scale factors `(W/2, H/2)`.
pub(crate) fn pixel_scale(cfg: &RenderConfig) -> (f64, f64) {
    (cfg.width as f64 / 2.0, cfg.height as f64 / 2.0)
}
