//! Analytic backward pass through the renderer.
//!
//! Per sample `x` and Gaussian `k` with `d = x - mu`, `A = cov'^-1`,
//! `g = exp(-d^T A d / 2)` and `s = c . u_bar`:
//!
//! ```text
//! dL/dc     += alpha g u_bar
//! dL/dalpha += g s
//! dL/dmu    += alpha g s A d
//! dL/dcov'  += alpha g s (A d)(A d)^T / 2
//! ```
//!
//! The covariance gradient is then pulled back through
//! `cov' = S L L^T S + box` to the Cholesky entries, and the mean gradient
//! through the normalized-to-pixel map.

mod bf16;
mod check;

pub use bf16::{bf16_cast, bf16_round, bf16_round_slice};
pub use check::{
    gradcheck, gradcheck_suite, mse_image_loss, random_case, GradCheck, GradCheckCase,
    GradCheckReport,
};

use rayon::prelude::*;

use crate::error::{GsddError, Result};
use crate::layout::{field, DistilledSet, RenderConfig, PARAMS_PER_GAUSSIAN};
use crate::raster::{
    bin_splats, floor_diag, floor_diag_slope, pixel_scale, prepare_splats, ssaa_offsets, tile_rect,
    Binning, ImageBuffer, Splat,
};

/// Gradient accumulator aligned one-to-one with `DistilledSet::params`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub grads: Vec<f64>,
}

impl GradBuffer {
    pub fn zeros(len: usize) -> Self {
        Self {
            grads: vec![0.0; len],
        }
    }

    pub fn for_set(set: &DistilledSet) -> Self {
        Self::zeros(set.params.len())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn add_assign(&mut self, other: &GradBuffer) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += b;
        }
    }
}

/// Pixel-space partials of one Gaussian: mean (2), covariance (xx, xy, yy),
/// color (3), alpha.
#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    mean: [f64; 2],
    cov: [f64; 3],
    color: [f64; 3],
    alpha: f64,
}

impl SplatGrad {
    #[inline]
    fn accumulate(&mut self, s: &Splat, sx: f64, sy: f64, upstream: &[f64], ch: usize) {
        let dx = sx - s.mean.0;
        let dy = sy - s.mean.1;
        let (ax, ay) = s.conic.apply(dx, dy);
        let g = (-0.5 * (dx * ax + dy * ay)).exp();
        let w = s.alpha * g;
        let mut dot = 0.0;
        for c in 0..ch {
            self.color[c] += w * upstream[c];
            dot += s.color[c] * upstream[c];
        }
        self.alpha += g * dot;
        let gs = w * dot;
        self.mean[0] += gs * ax;
        self.mean[1] += gs * ay;
        let half = 0.5 * gs;
        self.cov[0] += half * ax * ax;
        self.cov[1] += half * ax * ay;
        self.cov[2] += half * ay * ay;
    }

    fn add(&mut self, o: &SplatGrad) {
        for i in 0..2 {
            self.mean[i] += o.mean[i];
        }
        for i in 0..3 {
            self.cov[i] += o.cov[i];
            self.color[i] += o.color[i];
        }
        self.alpha += o.alpha;
    }

    /// Chain rule from pixel-space partials to the nine stored parameters.
    fn to_params<P: Copy + Into<f64>>(&self, p: &[P], cfg: &RenderConfig, out: &mut [f64]) {
        let (sx, sy) = pixel_scale(cfg);
        let l11: f64 = p[field::L11].into();
        let l21: f64 = p[field::L21].into();
        let l22: f64 = p[field::L22].into();
        let a = floor_diag(l11);
        let c = floor_diag(l22);
        let [gxx, gxy, gyy] = self.cov;
        // dL/dcov_xy counts both off-diagonal entries.
        let da = 2.0 * gxx * sx * sx * a + 2.0 * gxy * sx * sy * l21;
        let db = 2.0 * gxy * sx * sy * a + 2.0 * gyy * sy * sy * l21;
        let dc = 2.0 * gyy * sy * sy * c;
        out[field::U] = self.mean[0] * sx;
        out[field::V] = self.mean[1] * sy;
        out[field::L11] = da * floor_diag_slope(l11);
        out[field::L21] = db;
        out[field::L22] = dc * floor_diag_slope(l22);
        out[field::R] = self.color[0];
        out[field::G] = self.color[1];
        out[field::B] = self.color[2];
        out[field::ALPHA] = self.alpha;
    }
}

fn check_upstream(upstream: &[Vec<f64>], num_images: usize, cfg: &RenderConfig) -> Result<()> {
    if upstream.len() != num_images {
        return Err(GsddError::Geometry(format!(
            "{} upstream buffers for {num_images} images",
            upstream.len()
        )));
    }
    let len = cfg.width * cfg.height * cfg.channels;
    if upstream.iter().any(|u| u.len() != len) {
        return Err(GsddError::Geometry("upstream buffer size".into()));
    }
    Ok(())
}

/// Per-tile partials for every record of tile `gid`.
fn backward_tile(
    gid: usize,
    splats: &[Splat],
    binning: &Binning,
    offsets: &[(f64, f64)],
    upstream: &[Vec<f64>],
    cfg: &RenderConfig,
) -> Vec<SplatGrad> {
    let (image, local) = binning.layout.decompose(gid).expect("tile id in range");
    let records = binning.tile_records(gid);
    let mut partial = vec![SplatGrad::default(); records.len()];
    if records.is_empty() {
        return partial;
    }
    let (x0, x1, y0, y1) = tile_rect(local, &binning.layout, cfg);
    let ch = cfg.channels;
    let inv_samples = 1.0 / offsets.len() as f64;
    let up = &upstream[image];
    let mut scaled = [0.0f64; 3];
    for y in y0..y1 {
        for x in x0..x1 {
            let base = (y * cfg.width + x) * ch;
            for c in 0..ch {
                scaled[c] = up[base + c] * inv_samples;
            }
            if scaled[..ch].iter().all(|&u| u == 0.0) {
                continue;
            }
            for &(dx, dy) in offsets {
                let sx = x as f64 + dx;
                let sy = y as f64 + dy;
                for (rec, acc) in records.iter().zip(partial.iter_mut()) {
                    acc.accumulate(&splats[rec.gaussian_flat_index], sx, sy, &scaled, ch);
                }
            }
        }
    }
    partial
}

/// Tile-parallel backward pass. Tiles accumulate privately and are reduced
/// in ascending global tile id, so the result does not depend on the
/// worker count. `binning` freezes culling when supplied.
pub(crate) fn backward_tiled_f64<P: Copy + Into<f64> + Sync>(
    params: &[P],
    num_images: usize,
    gaussians_per_image: usize,
    cfg: &RenderConfig,
    upstream: &[Vec<f64>],
    binning: Option<&Binning>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if params.len() != num_images * gaussians_per_image * PARAMS_PER_GAUSSIAN {
        return Err(GsddError::Geometry("parameter buffer length".into()));
    }
    check_upstream(upstream, num_images, cfg)?;
    let offsets = ssaa_offsets(cfg.ssaa_factor)?;
    let splats = prepare_splats(params, cfg);
    let owned;
    let binning = match binning {
        Some(b) => b,
        None => {
            owned = bin_splats(&splats, gaussians_per_image, num_images, cfg);
            &owned
        }
    };

    let partials: Vec<Vec<SplatGrad>> = (0..binning.layout.total_tiles())
        .into_par_iter()
        .map(|gid| backward_tile(gid, &splats, binning, &offsets, upstream, cfg))
        .collect();

    let mut per_splat = vec![SplatGrad::default(); splats.len()];
    for (gid, partial) in partials.iter().enumerate() {
        for (rec, p) in binning.tile_records(gid).iter().zip(partial) {
            per_splat[rec.gaussian_flat_index].add(p);
        }
    }
    Ok(pull_back(params, &per_splat, cfg))
}

fn pull_back<P: Copy + Into<f64>>(
    params: &[P],
    per_splat: &[SplatGrad],
    cfg: &RenderConfig,
) -> Vec<f64> {
    let mut grads = vec![0.0; params.len()];
    for ((p, g), out) in params
        .chunks_exact(PARAMS_PER_GAUSSIAN)
        .zip(per_splat)
        .zip(grads.chunks_exact_mut(PARAMS_PER_GAUSSIAN))
    {
        g.to_params(p, cfg, out);
    }
    grads
}

/// Brute-force backward for one image's parameters: every Gaussian at
/// every sample, single-threaded, no culling.
pub(crate) fn backward_reference_f64<P: Copy + Into<f64>>(
    params: &[P],
    cfg: &RenderConfig,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    if upstream.len() != cfg.width * cfg.height * cfg.channels {
        return Err(GsddError::Geometry("upstream buffer size".into()));
    }
    let offsets = ssaa_offsets(cfg.ssaa_factor)?;
    let inv_samples = 1.0 / offsets.len() as f64;
    let splats: Vec<Splat> = params
        .chunks_exact(PARAMS_PER_GAUSSIAN)
        .map(|p| Splat::from_params(p, cfg))
        .collect();
    let ch = cfg.channels;
    let mut per_splat = vec![SplatGrad::default(); splats.len()];
    let mut scaled = [0.0f64; 3];
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let base = (y * cfg.width + x) * ch;
            for c in 0..ch {
                scaled[c] = upstream[base + c] * inv_samples;
            }
            for &(dx, dy) in &offsets {
                for (s, acc) in splats.iter().zip(per_splat.iter_mut()) {
                    acc.accumulate(s, x as f64 + dx, y as f64 + dy, &scaled, ch);
                }
            }
        }
    }
    Ok(pull_back(params, &per_splat, cfg))
}

/// Gradient of a loss with respect to every stored parameter, given the
/// loss gradient on each rendered image.
pub fn render_backward(
    set: &DistilledSet,
    cfg: &RenderConfig,
    upstream: &[ImageBuffer],
) -> Result<GradBuffer> {
    cfg.check_against(set)?;
    let up: Vec<Vec<f64>> = upstream.iter().map(ImageBuffer::to_f64).collect();
    render_backward_f64(set, cfg, &up)
}

/// As [`render_backward`] with `f64` upstream buffers.
pub fn render_backward_f64(
    set: &DistilledSet,
    cfg: &RenderConfig,
    upstream: &[Vec<f64>],
) -> Result<GradBuffer> {
    cfg.check_against(set)?;
    let grads = backward_tiled_f64(
        &set.params,
        set.num_images,
        set.gaussians_per_image,
        cfg,
        upstream,
        None,
    )?;
    Ok(GradBuffer { grads })
}

/// Single-threaded, unculled backward over the whole set.
pub fn render_backward_reference(
    set: &DistilledSet,
    cfg: &RenderConfig,
    upstream: &[ImageBuffer],
) -> Result<GradBuffer> {
    cfg.check_against(set)?;
    let up: Vec<Vec<f64>> = upstream.iter().map(ImageBuffer::to_f64).collect();
    check_upstream(&up, set.num_images, cfg)?;
    let mut grads = Vec::with_capacity(set.params.len());
    for (i, u) in up.iter().enumerate() {
        grads.extend(backward_reference_f64(set.image_params(i), cfg, u)?);
    }
    Ok(GradBuffer { grads })
}
