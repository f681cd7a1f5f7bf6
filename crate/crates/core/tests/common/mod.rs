#![allow(dead_code)]

use gsdd::layout::field;
use gsdd::{DistilledSet, ImageBuffer, RenderConfig, PARAMS_PER_GAUSSIAN};
use rand::Rng;

/// Random Gaussians spread over (and slightly beyond) the frame, with a mix
/// of narrow and broad footprints and signed colors.
pub fn random_set(
    rng: &mut impl Rng,
    w: usize,
    h: usize,
    ch: usize,
    m: usize,
    n: usize,
) -> DistilledSet {
    let labels = (0..n).map(|i| i % 2).collect();
    let mut set = DistilledSet::zeros(w, h, ch, m, 2, labels).unwrap();
    for g in set.params.chunks_exact_mut(PARAMS_PER_GAUSSIAN) {
        g[field::U] = rng.random_range(-1.1..1.1);
        g[field::V] = rng.random_range(-1.1..1.1);
        g[field::L11] = rng.random_range(0.05..0.6);
        g[field::L21] = rng.random_range(-0.3..0.3);
        g[field::L22] = rng.random_range(0.05..0.6);
        for c in 0..3 {
            g[field::R + c] = rng.random_range(-1.0..1.0);
        }
        g[field::ALPHA] = rng.random_range(-0.5..1.5);
    }
    set
}

/// Random anti-aliasing settings.
pub fn random_config(rng: &mut impl Rng, set: &DistilledSet) -> RenderConfig {
    RenderConfig::for_set(set)
        .with_prefilter(rng.random_bool(0.5))
        .with_ssaa(rng.random_range(1..=3))
        .with_tile_size([8, 16, 32][rng.random_range(0..3)])
}

pub fn constant_image(w: usize, h: usize, rgb: [f32; 3]) -> ImageBuffer {
    ImageBuffer::from_pixels(
        w,
        h,
        3,
        rgb.iter().copied().cycle().take(w * h * 3).collect(),
    )
    .unwrap()
}

/// Deterministic outdoor-like test scene in `[0, 1]`: a sky gradient over
/// ground, a sun disc, a building with a window and a fine texture.
pub fn natural_scene(size: usize) -> ImageBuffer {
    let s = size as f32;
    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = ((x as f32 + 0.5) / s, (y as f32 + 0.5) / s);
            let mut c = if fy < 0.55 {
                [0.45 + 0.3 * fy, 0.6 + 0.2 * fy, 0.9 - 0.2 * fy]
            } else {
                [0.35 + 0.1 * fx, 0.5 - 0.2 * (fy - 0.55), 0.2]
            };
            if (fx - 0.3).hypot(fy - 0.3) < 0.12 {
                c = [0.95, 0.85, 0.3];
            }
            if (0.55..0.8).contains(&fx) && (0.4..0.75).contains(&fy) {
                c = if (0.62..0.7).contains(&fx) && (0.5..0.6).contains(&fy) {
                    [0.9, 0.9, 0.6]
                } else {
                    [0.6, 0.25, 0.2]
                };
            }
            let texture = ((x * 7 + y * 13) % 5) as f32 * 0.01;
            pixels.extend(c.iter().map(|v| (v + texture).min(1.0)));
        }
    }
    ImageBuffer::from_pixels(size, size, 3, pixels).unwrap()
}

pub fn assert_bitwise_eq(a: &[f32], b: &[f32]) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert_eq!(x.to_bits(), y.to_bits(), "element {i}: {x} vs {y}");
    }
}

pub fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .unwrap()
}
