use std::mem::size_of;

use rayon::prelude::*;

use super::{ssaa_offsets, ImageBuffer, Splat};
use crate::error::{GsddError, Result};
use crate::layout::{DistilledSet, RenderConfig, TileLayout, PARAMS_PER_GAUSSIAN};

/// One (tile, Gaussian) overlap. Ordering sorts by tile first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct IntersectionRecord {
    pub global_tile_id: usize,
    pub gaussian_flat_index: usize,
}

/// Records sorted by global tile id plus the record range of every tile.
#[derive(Debug, Clone)]
pub struct Binning {
    pub layout: TileLayout,
    pub records: Vec<IntersectionRecord>,
    /// `tile_start[t]..tile_start[t + 1]` indexes the records of tile `t`.
    pub tile_start: Vec<usize>,
}

impl Binning {
    pub fn tile_records(&self, global_tile_id: usize) -> &[IntersectionRecord] {
        &self.records[self.tile_start[global_tile_id]..self.tile_start[global_tile_id + 1]]
    }

    pub(crate) fn bytes(&self) -> usize {
        self.records.len() * size_of::<IntersectionRecord>()
            + self.tile_start.len() * size_of::<usize>()
    }
}

/// Transient memory used by one render call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderStats {
    pub records: usize,
    pub peak_bytes: usize,
}

pub fn prepare_splats<P: Copy + Into<f64> + Sync>(params: &[P], cfg: &RenderConfig) -> Vec<Splat> {
    params
        .par_chunks_exact(PARAMS_PER_GAUSSIAN)
        .map(|p| Splat::from_params(p, cfg))
        .collect()
}

/// Inclusive tile index range along one axis whose samples the interval
/// `[center - radius, center + radius]` can reach.
fn tile_span(
    center: f64,
    radius: f64,
    extent: usize,
    tile: usize,
    tiles: usize,
) -> Option<(usize, usize)> {
    // Pixel i covers edge coordinates [i, i + 1); its samples lie in that span.
    let lo = center - radius + 0.5;
    let hi = center + radius + 0.5;
    if lo.is_nan() || hi.is_nan() || hi < 0.0 || lo > extent as f64 {
        return None;
    }
    let first = (lo.max(0.0) / tile as f64).floor() as usize;
    let last = ((hi.min(extent as f64) / tile as f64).floor() as usize).min(tiles - 1);
    (first <= last).then_some((first, last))
}

/// Emits one record per (Gaussian, overlapped tile) and sorts by tile id.
/// Within a tile, records stay in ascending Gaussian order.
pub fn bin_splats(
    splats: &[Splat],
    gaussians_per_image: usize,
    num_images: usize,
    cfg: &RenderConfig,
) -> Binning {
    let layout = TileLayout::for_image(cfg.width, cfg.height, cfg.tile_size, num_images);
    let mut records = Vec::new();
    if gaussians_per_image > 0 {
        for (flat, s) in splats.iter().enumerate() {
            let image = flat / gaussians_per_image;
            let r = s.radius(cfg.cutoff_sigma);
            let Some((tx0, tx1)) = tile_span(s.mean.0, r, cfg.width, cfg.tile_size, layout.tiles_x)
            else {
                continue;
            };
            let Some((ty0, ty1)) =
                tile_span(s.mean.1, r, cfg.height, cfg.tile_size, layout.tiles_y)
            else {
                continue;
            };
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    records.push(IntersectionRecord {
                        global_tile_id: image * layout.tiles_per_image + ty * layout.tiles_x + tx,
                        gaussian_flat_index: flat,
                    });
                }
            }
        }
    }
    records.sort_by_key(|r| r.global_tile_id);

    let total = layout.total_tiles();
    let mut tile_start = vec![0usize; total + 1];
    for r in &records {
        tile_start[r.global_tile_id + 1] += 1;
    }
    for t in 0..total {
        tile_start[t + 1] += tile_start[t];
    }
    Binning {
        layout,
        records,
        tile_start,
    }
}

/// Pixel rectangle `[x0, x1) x [y0, y1)` of a local tile.
pub(crate) fn tile_rect(
    local: usize,
    layout: &TileLayout,
    cfg: &RenderConfig,
) -> (usize, usize, usize, usize) {
    let tx = local % layout.tiles_x;
    let ty = local / layout.tiles_x;
    let x0 = tx * cfg.tile_size;
    let y0 = ty * cfg.tile_size;
    (
        x0,
        (x0 + cfg.tile_size).min(cfg.width),
        y0,
        (y0 + cfg.tile_size).min(cfg.height),
    )
}

fn rasterize_tile(
    gid: usize,
    splats: &[Splat],
    binning: &Binning,
    offsets: &[(f64, f64)],
    cfg: &RenderConfig,
) -> Vec<f64> {
    let (_, local) = binning.layout.decompose(gid).expect("tile id in range");
    let (x0, x1, y0, y1) = tile_rect(local, &binning.layout, cfg);
    let ch = cfg.channels;
    let records = binning.tile_records(gid);
    let inv_samples = 1.0 / offsets.len() as f64;
    let mut block = vec![0.0; (x1 - x0) * (y1 - y0) * ch];
    let mut acc = [0.0f64; 3];
    for y in y0..y1 {
        for x in x0..x1 {
            acc.fill(0.0);
            for &(dx, dy) in offsets {
                let sx = x as f64 + dx;
                let sy = y as f64 + dy;
                for rec in records {
                    let s = &splats[rec.gaussian_flat_index];
                    let w = s.alpha * s.response(sx, sy);
                    for c in 0..ch {
                        acc[c] += w * s.color[c];
                    }
                }
            }
            let base = ((y - y0) * (x1 - x0) + (x - x0)) * ch;
            for c in 0..ch {
                block[base + c] = acc[c] * inv_samples;
            }
        }
    }
    block
}

/// Tile-scheduled forward pass over a flat parameter buffer. When
/// `binning` is supplied it is used as-is instead of re-binning, which
/// freezes the culling decisions.
pub(crate) fn forward_tiled_f64<P: Copy + Into<f64> + Sync>(
    params: &[P],
    num_images: usize,
    gaussians_per_image: usize,
    cfg: &RenderConfig,
    binning: Option<&Binning>,
) -> Result<(Vec<Vec<f64>>, RenderStats)> {
    cfg.validate()?;
    if params.len() != num_images * gaussians_per_image * PARAMS_PER_GAUSSIAN {
        return Err(GsddError::Geometry("parameter buffer length".into()));
    }
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

    let blocks: Vec<Vec<f64>> = (0..binning.layout.total_tiles())
        .into_par_iter()
        .map(|gid| rasterize_tile(gid, &splats, binning, &offsets, cfg))
        .collect();

    let ch = cfg.channels;
    let image_len = cfg.width * cfg.height * ch;
    let mut images = vec![vec![0.0; image_len]; num_images];
    for (gid, block) in blocks.iter().enumerate() {
        let (image, local) = binning.layout.decompose(gid)?;
        let (x0, x1, y0, y1) = tile_rect(local, &binning.layout, cfg);
        let row = (x1 - x0) * ch;
        for y in y0..y1 {
            let dst = (y * cfg.width + x0) * ch;
            let src = (y - y0) * row;
            images[image][dst..dst + row].copy_from_slice(&block[src..src + row]);
        }
    }

    let f64_bytes = num_images * image_len * size_of::<f64>();
    let stats = RenderStats {
        records: binning.records.len(),
        // splats + binning + tile blocks + assembled images
        peak_bytes: splats.len() * size_of::<Splat>() + binning.bytes() + 2 * f64_bytes,
    };
    Ok((images, stats))
}

pub fn render_batched_with_stats(
    set: &DistilledSet,
    cfg: &RenderConfig,
) -> Result<(Vec<ImageBuffer>, RenderStats)> {
    cfg.check_against(set)?;
    let (images, mut stats) = forward_tiled_f64(
        &set.params,
        set.num_images,
        set.gaussians_per_image,
        cfg,
        None,
    )?;
    let out: Vec<ImageBuffer> = images
        .iter()
        .map(|d| ImageBuffer::from_f64(cfg.width, cfg.height, cfg.channels, d))
        .collect();
    stats.peak_bytes += out
        .iter()
        .map(|i| i.len() * size_of::<f32>())
        .sum::<usize>();
    Ok((out, stats))
}

/// Renders every image of the set as one tile-parallel workload.
pub fn render_batched(set: &DistilledSet, cfg: &RenderConfig) -> Result<Vec<ImageBuffer>> {
    render_batched_with_stats(set, cfg).map(|(images, _)| images)
}
