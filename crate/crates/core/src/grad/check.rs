//! Central finite-difference verification of the analytic backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backward_tiled_f64;
use crate::error::Result;
use crate::layout::{DistilledSet, RenderConfig, PARAMS_PER_GAUSSIAN};
use crate::raster::{bin_splats, forward_tiled_f64, prepare_splats};

/// Denominator floor: below it the error is effectively absolute, so a
/// relative tolerance of 1e-3 becomes an absolute one of 1e-6.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Central-difference step in normalized parameter units.
    pub step: f64,
    /// Multiplier applied to the analytic gradient before comparison.
    /// Anything other than 1 should make the check fail.
    pub analytic_scale: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-4,
            analytic_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat parameter index of the worst error.
    pub worst_param: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    fn merge(&mut self, other: &GradCheckReport) {
        let worse = other.worst_param.is_some()
            && (self.worst_param.is_none() || other.max_rel_error > self.max_rel_error);
        if worse {
            let checked = self.checked;
            *self = *other;
            self.checked = checked;
        }
        self.checked += other.checked;
    }
}

/// Mean-squared error against fixed targets, summed over every element of
/// every image.
pub fn mse_image_loss(targets: Vec<Vec<f64>>) -> impl Fn(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    move |images: &[Vec<f64>]| {
        let n: usize = targets.iter().map(Vec::len).sum();
        let scale = 1.0 / n.max(1) as f64;
        let mut loss = 0.0;
        let grads = images
            .iter()
            .zip(&targets)
            .map(|(img, t)| {
                img.iter()
                    .zip(t)
                    .map(|(x, y)| {
                        let r = x - y;
                        loss += r * r;
                        2.0 * r * scale
                    })
                    .collect()
            })
            .collect();
        (loss * scale, grads)
    }
}

impl GradCheck {
    pub fn run<L>(
        &self,
        set: &DistilledSet,
        cfg: &RenderConfig,
        loss_fn: L,
    ) -> Result<GradCheckReport>
    where
        L: Fn(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>),
    {
        cfg.check_against(set)?;
        let n = set.num_images;
        let m = set.gaussians_per_image;
        let mut params: Vec<f64> = set.params.iter().map(|&x| x as f64).collect();

        // Culling is frozen at the base point so both sides of every
        // difference see the same piecewise-smooth function.
        let binning = bin_splats(&prepare_splats(&params, cfg), m, n, cfg);
        let (images, _) = forward_tiled_f64(&params, n, m, cfg, Some(&binning))?;
        let (_, upstream) = loss_fn(&images);
        let analytic = backward_tiled_f64(&params, n, m, cfg, &upstream, Some(&binning))?;

        let mut report = GradCheckReport {
            checked: params.len(),
            ..Default::default()
        };
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + self.step;
            let plus = loss_fn(&forward_tiled_f64(&params, n, m, cfg, Some(&binning))?.0).0;
            params[i] = orig - self.step;
            let minus = loss_fn(&forward_tiled_f64(&params, n, m, cfg, Some(&binning))?.0).0;
            params[i] = orig;
            let numeric = (plus - minus) / (2.0 * self.step);
            let a = analytic[i] * self.analytic_scale;
            let err = (a - numeric).abs() / numeric.abs().max(REL_FLOOR);
            if report.worst_param.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = Some(i);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        Ok(report)
    }
}

/// Max relative error between analytic and central-difference gradients of
/// `loss_fn` over every parameter of the set. Empty sets report 0.
pub fn gradcheck<L>(set: &DistilledSet, cfg: &RenderConfig, loss_fn: L) -> Result<GradCheckReport>
where
    L: Fn(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>),
{
    GradCheck::default().run(set, cfg, loss_fn)
}

/// A randomized gradient-check problem with MSE targets.
#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub set: DistilledSet,
    pub cfg: RenderConfig,
    pub targets: Vec<Vec<f64>>,
}

/// Draws a small random problem. Anti-aliasing and cutoff modes cycle with
/// `index` so that consecutive cases cover
/// {prefilter on/off} x {ssaa 1, 2} x {cutoff 3, inf}.
pub fn random_case(rng: &mut impl Rng, index: usize) -> GradCheckCase {
    let width = rng.random_range(2..=16);
    let height = rng.random_range(2..=16);
    let channels = if rng.random_bool(0.8) { 3 } else { 1 };
    let m = rng.random_range(1..=8);
    let images = rng.random_range(1..=2);
    let cfg = RenderConfig::new(width, height, channels)
        .with_prefilter(index.is_multiple_of(2))
        .with_ssaa(if (index / 2).is_multiple_of(2) { 1 } else { 2 })
        .with_cutoff(if (index / 4).is_multiple_of(2) {
            3.0
        } else {
            f64::INFINITY
        })
        .with_tile_size(if rng.random_bool(0.5) { 8 } else { 16 });

    let diag = |rng: &mut dyn rand::RngCore| -> f32 {
        let mag: f32 = rng.random_range(0.08..0.6);
        if rng.random_bool(0.2) {
            -mag
        } else {
            mag
        }
    };
    let mut params = Vec::with_capacity(images * m * PARAMS_PER_GAUSSIAN);
    for _ in 0..images * m {
        params.push(rng.random_range(-0.95..0.95f32));
        params.push(rng.random_range(-0.95..0.95f32));
        params.push(diag(rng));
        params.push(rng.random_range(-0.3..0.3f32));
        params.push(diag(rng));
        for _ in 0..3 {
            params.push(rng.random_range(-1.0..1.0f32));
        }
        let a: f32 = rng.random_range(0.2..1.5);
        params.push(if rng.random_bool(0.2) { -a } else { a });
    }
    let set = DistilledSet::from_parts(width, height, channels, m, 1, params, vec![0; images])
        .expect("consistent random case");
    let targets = (0..images)
        .map(|_| {
            (0..width * height * channels)
                .map(|_| rng.random_range(0.0..1.0))
                .collect()
        })
        .collect();
    GradCheckCase { set, cfg, targets }
}

/// Runs `cases` random problems and returns the worst result.
pub fn gradcheck_suite(cases: usize, seed: u64, check: &GradCheck) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = GradCheckReport::default();
    for i in 0..cases {
        let case = random_case(&mut rng, i);
        let r = check.run(&case.set, &case.cfg, mse_image_loss(case.targets))?;
        log::debug!("gradcheck case {i}: {r:?}");
        worst.merge(&r);
    }
    Ok(worst)
}
