//! Wall-clock comparison of the brute-force and tile-batched renderers.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GsddError, Result};
use crate::grad::{render_backward, render_backward_reference};
use crate::layout::{field, DistilledSet, RenderConfig, PARAMS_PER_GAUSSIAN};
use crate::raster::{render_batched_with_stats, render_reference, ImageBuffer, Splat};

pub const BENCH_CSV_HEADER: &str = "res,batch,M,path,fwd_ms,fwdbwd_ms,peak_bytes";

/// Relative tolerance of the correctness gate run before timing.
pub const GATE_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderPath {
    Reference,
    Batched,
}

impl fmt::Display for RenderPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Reference => "reference",
            Self::Batched => "batched",
        })
    }
}

impl std::str::FromStr for RenderPath {
    type Err = GsddError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Self::Reference),
            "batched" => Ok(Self::Batched),
            _ => Err(GsddError::Config(format!("unknown render path {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub resolution: usize,
    pub batch: usize,
    pub m: usize,
    pub path: RenderPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub runs: usize,
    pub warmups: usize,
    pub workers: usize,
    pub cutoff_sigma: f64,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            runs: 5,
            warmups: 2,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cutoff_sigma: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub point: BenchPoint,
    pub fwd_ms: f64,
    pub fwdbwd_ms: f64,
    pub peak_bytes: usize,
}

impl BenchRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{:.3},{}",
            self.point.resolution,
            self.point.batch,
            self.point.m,
            self.point.path,
            self.fwd_ms,
            self.fwdbwd_ms,
            self.peak_bytes
        )
    }
}

pub fn write_bench_csv(rows: &[BenchRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{BENCH_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv_line())?;
    }
    Ok(())
}

/// Random RGB set with footprints comparable to a fitted set of `m`
/// Gaussians per image.
pub fn random_bench_set(
    resolution: usize,
    batch: usize,
    m: usize,
    seed: u64,
) -> Result<DistilledSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = DistilledSet::zeros(resolution, resolution, 3, m, 1, vec![0; batch])?;
    let base = 3.0 / (m.max(1) as f32).sqrt();
    for g in set.params.chunks_exact_mut(PARAMS_PER_GAUSSIAN) {
        g[field::U] = rng.random_range(-0.95..0.95);
        g[field::V] = rng.random_range(-0.95..0.95);
        g[field::L11] = base * rng.random_range(0.3..1.0);
        g[field::L21] = base * rng.random_range(-0.3..0.3);
        g[field::L22] = base * rng.random_range(0.3..1.0);
        for c in 0..3 {
            g[field::R + c] = rng.random_range(-1.0..1.0);
        }
        g[field::ALPHA] = rng.random_range(0.2..1.0);
    }
    Ok(set)
}

fn render_reference_all(set: &DistilledSet, cfg: &RenderConfig) -> Result<Vec<ImageBuffer>> {
    (0..set.num_images)
        .map(|i| render_reference(set, i, cfg))
        .collect()
}

/// Transient bytes held by the brute-force path: splats of one image, one
/// `f64` accumulator row set per image, and the output images.
fn reference_peak_bytes(set: &DistilledSet, cfg: &RenderConfig) -> usize {
    let image_len = cfg.width * cfg.height * cfg.channels;
    set.gaussians_per_image * size_of::<Splat>()
        + image_len * size_of::<f64>()
        + set.num_images * image_len * size_of::<f32>()
}

fn median_ms(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

fn time_ms<T>(opts: &BenchOptions, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    for _ in 0..opts.warmups {
        f()?;
    }
    let mut samples = Vec::with_capacity(opts.runs);
    for _ in 0..opts.runs {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median_ms(samples))
}

/// Checks that the batched renderer without culling reproduces the
/// reference on `set`; returns the max relative pixel error.
pub fn correctness_gate(set: &DistilledSet, cfg: &RenderConfig) -> Result<f64> {
    let unculled = cfg.with_cutoff(f64::INFINITY);
    let (batched, _) = render_batched_with_stats(set, &unculled)?;
    let reference = render_reference_all(set, &unculled)?;
    let err = batched
        .iter()
        .zip(&reference)
        .map(|(b, r)| b.max_relative_error(r, 1e-3))
        .fold(0.0, f64::max);
    if err > GATE_TOLERANCE {
        return Err(GsddError::Geometry(format!(
            "batched renderer deviates from reference by {err:e}"
        )));
    }
    Ok(err)
}

fn bench_point(point: &BenchPoint, opts: &BenchOptions) -> Result<BenchRow> {
    let set = random_bench_set(point.resolution, point.batch, point.m, opts.seed)?;
    let cfg = RenderConfig::for_set(&set).with_cutoff(opts.cutoff_sigma);
    correctness_gate(&set, &cfg)?;
    let ones: Vec<ImageBuffer> = (0..set.num_images)
        .map(|_| {
            let mut img = ImageBuffer::zeros(cfg.width, cfg.height, cfg.channels);
            img.pixels.fill(1.0);
            img
        })
        .collect();
    let (fwd_ms, fwdbwd_ms, peak_bytes) = match point.path {
        RenderPath::Reference => (
            time_ms(opts, || render_reference_all(&set, &cfg))?,
            time_ms(opts, || {
                render_reference_all(&set, &cfg)?;
                render_backward_reference(&set, &cfg, &ones)
            })?,
            reference_peak_bytes(&set, &cfg),
        ),
        RenderPath::Batched => (
            time_ms(opts, || render_batched_with_stats(&set, &cfg))?,
            time_ms(opts, || {
                render_batched_with_stats(&set, &cfg)?;
                render_backward(&set, &cfg, &ones)
            })?,
            render_batched_with_stats(&set, &cfg)?.1.peak_bytes,
        ),
    };
    Ok(BenchRow {
        point: *point,
        fwd_ms,
        fwdbwd_ms,
        peak_bytes,
    })
}

/// Times every grid point on a dedicated pool of `opts.workers` threads.
/// Each point passes the correctness gate before it is timed.
pub fn bench_render(grid: &[BenchPoint], opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    if grid.is_empty() {
        return Err(GsddError::Empty("benchmark grid is empty".into()));
    }
    if opts.runs == 0 {
        return Err(GsddError::Config("at least one timed run is needed".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| GsddError::Config(e.to_string()))?;
    log::info!(
        "benchmarking {} configurations on {} workers",
        grid.len(),
        opts.workers.max(1)
    );
    pool.install(|| grid.iter().map(|p| bench_point(p, opts)).collect())
}
