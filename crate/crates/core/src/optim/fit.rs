use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::loss::{boundary_terms, mse_loss_grad, psnr};
use crate::data::LabeledImageDataset;
use crate::error::{GsddError, Result};
use crate::grad::{bf16_cast, render_backward_f64};
use crate::layout::{clip_positions, field, DistilledSet, RenderConfig, PARAMS_PER_GAUSSIAN};
use crate::raster::{render_batched, ImageBuffer};

/// Width of the initial footprint relative to the `2/sqrt(M)` spacing of
/// an even tiling.
const INIT_FOOTPRINT: f64 = 1.5;
const INIT_POSITION_RANGE: f32 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    /// Fitting steps used to initialize a distillation run.
    pub init_steps: usize,
    /// Real images per class per distillation step (capped at class size).
    pub batch_real: usize,
    /// Synthetic images per class per distillation step (capped at GPC).
    pub batch_syn: usize,
    pub lambda_boundary: f64,
    pub epsilon_clip: f32,
    pub bf16_forward: bool,
    pub feature_depth: usize,
    pub feature_width: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            steps: 1000,
            init_steps: 300,
            batch_real: 256,
            batch_syn: 256,
            lambda_boundary: 0.1,
            epsilon_clip: 1e-3,
            bf16_forward: true,
            feature_depth: 2,
            feature_width: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_boundary >= 0.0) {
            return Err(GsddError::Config(format!(
                "lambda_boundary {} < 0",
                self.lambda_boundary
            )));
        }
        if !(self.lr >= 0.0) {
            return Err(GsddError::Config(format!("lr {} < 0", self.lr)));
        }
        if !(self.epsilon_clip > 0.0 && self.epsilon_clip < 1.0) {
            return Err(GsddError::Config(format!(
                "epsilon_clip {} not in (0, 1)",
                self.epsilon_clip
            )));
        }
        if self.batch_real == 0 || self.batch_syn == 0 {
            return Err(GsddError::Config("batch sizes must be positive".into()));
        }
        Ok(())
    }
}

/// One row of a loss trace. `data` is the MSE while fitting and the
/// distribution-matching loss while distilling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub total: f64,
    #[serde(rename = "mse_or_dm")]
    pub data: f64,
    pub boundary: f64,
}

pub fn write_trace_csv(rows: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub set: DistilledSet,
    /// Per-image PSNR (unit peak) of the initialization.
    pub psnr_init: Vec<f64>,
    pub psnr_final: Vec<f64>,
    /// Losses summed over images, one row per step.
    pub trace: Vec<TraceRow>,
}

/// Random initialization of one image's Gaussians; colors are read from
/// the target at the pixel nearest each center.
pub fn init_image(params: &mut [f32], target: &ImageBuffer, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = params.len() / PARAMS_PER_GAUSSIAN;
    let l = (2.0 * INIT_FOOTPRINT / (m.max(1) as f64).sqrt()) as f32;
    for g in params.chunks_exact_mut(PARAMS_PER_GAUSSIAN) {
        let u = rng.random_range(-INIT_POSITION_RANGE..=INIT_POSITION_RANGE);
        let v = rng.random_range(-INIT_POSITION_RANGE..=INIT_POSITION_RANGE);
        let (px, py) =
            crate::layout::normalized_to_pixel(u as f64, v as f64, target.width, target.height);
        let x = (px.round().max(0.0) as usize).min(target.width - 1);
        let y = (py.round().max(0.0) as usize).min(target.height - 1);
        g[field::U] = u;
        g[field::V] = v;
        g[field::L11] = l;
        g[field::L21] = 0.0;
        g[field::L22] = l;
        for c in 0..3 {
            let src = if target.channels == 1 { 0 } else { c };
            g[field::R + c] = target.get(x, y, src);
        }
        g[field::ALPHA] = 1.0;
    }
}

/// The parameters the renderer sees: a bf16 copy when enabled, the masters
/// otherwise. Gradients taken at this point pass straight through to the
/// masters.
pub(crate) fn forward_view(set: &DistilledSet, bf16: bool) -> std::borrow::Cow<'_, DistilledSet> {
    if bf16 {
        std::borrow::Cow::Owned(bf16_cast(set))
    } else {
        std::borrow::Cow::Borrowed(set)
    }
}

fn image_psnr(rendered: &[ImageBuffer], targets: &[ImageBuffer]) -> Result<Vec<f64>> {
    rendered
        .iter()
        .zip(targets)
        .map(|(r, t)| psnr(r, t, 1.0))
        .collect()
}

/// Fits `m` Gaussians to each target by minimizing per-image MSE plus the
/// boundary regularizer. Images are optimized independently (separate
/// losses, element-wise optimizer), batched through one renderer call.
/// Image `i` is initialized from seed `cfg.seed + i`.
pub fn fit_images(
    targets: &[ImageBuffer],
    m: usize,
    cfg: &TrainConfig,
    render_cfg: &RenderConfig,
) -> Result<FitResult> {
    fit_images_with_labels(targets, None, 1, m, cfg.steps, cfg, render_cfg)
}

/// As [`fit_images`], keeping the labels and class count of `dataset` in
/// the fitted set.
pub fn fit_dataset(
    dataset: &LabeledImageDataset,
    m: usize,
    cfg: &TrainConfig,
    render_cfg: &RenderConfig,
) -> Result<FitResult> {
    fit_images_with_labels(
        &dataset.images,
        Some(&dataset.labels),
        dataset.class_count,
        m,
        cfg.steps,
        cfg,
        render_cfg,
    )
}

pub(crate) fn fit_images_with_labels(
    targets: &[ImageBuffer],
    labels: Option<&[usize]>,
    class_count: usize,
    m: usize,
    steps: usize,
    cfg: &TrainConfig,
    render_cfg: &RenderConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if m == 0 {
        return Err(GsddError::Budget(
            "cannot fit with zero Gaussians per image".into(),
        ));
    }
    let first = targets
        .first()
        .ok_or_else(|| GsddError::Empty("no target images".into()))?;
    if targets.iter().any(|t| !t.same_geometry(first)) {
        return Err(GsddError::Geometry("targets differ in geometry".into()));
    }
    let labels = labels.map_or_else(|| vec![0; targets.len()], <[usize]>::to_vec);
    let mut set = DistilledSet::zeros(
        first.width,
        first.height,
        first.channels,
        m,
        class_count,
        labels,
    )?;
    render_cfg.check_against(&set)?;
    for (i, t) in targets.iter().enumerate() {
        init_image(set.image_params_mut(i), t, cfg.seed.wrapping_add(i as u64));
    }
    clip_positions(&mut set, cfg.epsilon_clip);

    let psnr_init = image_psnr(
        &render_batched(&forward_view(&set, cfg.bf16_forward), render_cfg)?,
        targets,
    )?;
    let mut adam = AdamState::new(set.params.len(), cfg.lr);
    let mut trace = Vec::with_capacity(steps);
    let per_image = m * PARAMS_PER_GAUSSIAN;
    for step in 0..steps {
        let view = forward_view(&set, cfg.bf16_forward);
        let rendered = render_batched(&view, render_cfg)?;
        let mut upstream = Vec::with_capacity(targets.len());
        let mut mse_sum = 0.0;
        for (r, t) in rendered.iter().zip(targets) {
            let (l, g) = mse_loss_grad(r, t)?;
            mse_sum += l;
            upstream.push(g);
        }
        let mut grads = render_backward_f64(&view, render_cfg, &upstream)?.grads;
        drop(view);
        let mut boundary_sum = 0.0;
        for (p, g) in set
            .params
            .chunks_exact(per_image)
            .zip(grads.chunks_exact_mut(per_image))
        {
            boundary_sum += boundary_terms(p, cfg.lambda_boundary, g)?;
        }
        trace.push(TraceRow {
            step,
            total: mse_sum + boundary_sum,
            data: mse_sum,
            boundary: boundary_sum,
        });
        adam.step(&mut set.params, &grads)?;
        clip_positions(&mut set, cfg.epsilon_clip);
    }
    let psnr_final = image_psnr(
        &render_batched(&forward_view(&set, cfg.bf16_forward), render_cfg)?,
        targets,
    )?;
    Ok(FitResult {
        set,
        psnr_init,
        psnr_final,
        trace,
    })
}
