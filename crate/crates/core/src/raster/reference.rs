use super::{ssaa_offsets, ImageBuffer, Splat};
use crate::error::{check_index, Result};
use crate::layout::{DistilledSet, RenderConfig, PARAMS_PER_GAUSSIAN};

/// Brute-force render of one image: every Gaussian contributes to every
/// sample, no culling, single-threaded.
pub fn render_reference(
    set: &DistilledSet,
    image_index: usize,
    cfg: &RenderConfig,
) -> Result<ImageBuffer> {
    cfg.check_against(set)?;
    check_index("image", image_index, set.num_images)?;
    let data = reference_image_f64(set.image_params(image_index), cfg)?;
    Ok(ImageBuffer::from_f64(
        cfg.width,
        cfg.height,
        cfg.channels,
        &data,
    ))
}

pub(crate) fn reference_image_f64<P: Copy + Into<f64>>(
    params: &[P],
    cfg: &RenderConfig,
) -> Result<Vec<f64>> {
    let offsets = ssaa_offsets(cfg.ssaa_factor)?;
    let inv_samples = 1.0 / offsets.len() as f64;
    let splats: Vec<Splat> = params
        .chunks_exact(PARAMS_PER_GAUSSIAN)
        .map(|p| Splat::from_params(p, cfg))
        .collect();
    let ch = cfg.channels;
    let mut out = vec![0.0; cfg.width * cfg.height * ch];
    let mut acc = [0.0f64; 3];
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            acc.fill(0.0);
            for &(dx, dy) in &offsets {
                let sx = x as f64 + dx;
                let sy = y as f64 + dy;
                for s in &splats {
                    let w = s.alpha * s.response(sx, sy);
                    for c in 0..ch {
                        acc[c] += w * s.color[c];
                    }
                }
            }
            let base = (y * cfg.width + x) * ch;
            for c in 0..ch {
                out[base + c] = acc[c] * inv_samples;
            }
        }
    }
    Ok(out)
}
