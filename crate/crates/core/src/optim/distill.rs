use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::featnet::{dm_loss_grad, FeatureNet, FeatureNetSpec};
use super::fit::{fit_images_with_labels, forward_view, TraceRow, TrainConfig};
use super::loss::boundary_terms;
use crate::data::LabeledImageDataset;
use crate::error::{GsddError, Result};
use crate::grad::render_backward_f64;
use crate::layout::{budget_points, clip_positions, BudgetSpec, DistilledSet, RenderConfig};
use crate::raster::{render_batched, ImageBuffer};

#[derive(Debug, Clone)]
pub struct DistillResult {
    pub set: DistilledSet,
    pub trace: Vec<TraceRow>,
}

/// `count` distinct draws from `pool` when it is large enough, draws with
/// replacement otherwise.
fn draw(rng: &mut ChaCha8Rng, pool: &[usize], count: usize) -> Vec<usize> {
    if count <= pool.len() {
        sample(rng, pool.len(), count)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    } else {
        (0..count)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect()
    }
}

/// Distribution-matching distillation into `budget.gpc` Gaussian images per
/// class, each holding as many Gaussians as the budget allows.
///
/// Synthetic images are ordered class-major. They are initialized by
/// fitting randomly drawn real images for `cfg.init_steps`, then refined
/// for `cfg.steps` against a freshly seeded random feature extractor per
/// step. Real batches are drawn without replacement and capped at the
/// class size; synthetic batches are capped at `budget.gpc`. The boundary
/// term averages over every Gaussian of the set.
pub fn distill_dm(
    real: &LabeledImageDataset,
    budget: &BudgetSpec,
    cfg: &TrainConfig,
    render_cfg: &RenderConfig,
) -> Result<DistillResult> {
    cfg.validate()?;
    let m = budget_points(budget)?;
    let (w, h, ch) = real
        .geometry()
        .ok_or_else(|| GsddError::Empty("real dataset is empty".into()))?;
    let classes = real.class_count;
    let by_class: Vec<Vec<usize>> = (0..classes).map(|c| real.indices_of_class(c)).collect();
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(GsddError::Empty(format!("class {c} has no real images")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gpc = budget.gpc;
    let mut init_targets = Vec::with_capacity(classes * gpc);
    let mut labels = Vec::with_capacity(classes * gpc);
    for (c, pool) in by_class.iter().enumerate() {
        for i in draw(&mut rng, pool, gpc) {
            init_targets.push(real.images[i].clone());
            labels.push(c);
        }
    }
    let render_cfg = RenderConfig {
        width: w,
        height: h,
        channels: ch,
        ..*render_cfg
    };
    let init = fit_images_with_labels(
        &init_targets,
        Some(&labels),
        classes,
        m,
        cfg.init_steps,
        cfg,
        &render_cfg,
    )?;
    let mut set = init.set;

    let mut adam = AdamState::new(set.params.len(), cfg.lr);
    let mut trace = Vec::with_capacity(cfg.steps);
    let syn_per_class = cfg.batch_syn.min(gpc);
    let image_len = w * h * ch;
    for step in 0..cfg.steps {
        let net = FeatureNet::new(
            FeatureNetSpec {
                depth: cfg.feature_depth,
                width: cfg.feature_width,
                seed: rng.random(),
            },
            ch,
        );
        let view = forward_view(&set, cfg.bf16_forward);
        let rendered = render_batched(&view, &render_cfg)?;
        let mut real_batches: Vec<Vec<&ImageBuffer>> = Vec::with_capacity(classes);
        let mut syn_batches: Vec<Vec<&ImageBuffer>> = Vec::with_capacity(classes);
        let mut syn_ids: Vec<Vec<usize>> = Vec::with_capacity(classes);
        for (c, pool) in by_class.iter().enumerate() {
            let take = cfg.batch_real.min(pool.len());
            real_batches.push(
                sample(&mut rng, pool.len(), take)
                    .into_iter()
                    .map(|k| &real.images[pool[k]])
                    .collect(),
            );
            let ids: Vec<usize> = sample(&mut rng, gpc, syn_per_class)
                .into_iter()
                .map(|k| c * gpc + k)
                .collect();
            syn_batches.push(ids.iter().map(|&i| &rendered[i]).collect());
            syn_ids.push(ids);
        }
        let (dm, dm_grads) = dm_loss_grad(&real_batches, &syn_batches, &net)?;
        let mut upstream = vec![vec![0.0; image_len]; set.num_images];
        for (ids, grads) in syn_ids.iter().zip(dm_grads) {
            for (&i, g) in ids.iter().zip(grads) {
                upstream[i] = g;
            }
        }
        let mut grads = render_backward_f64(&view, &render_cfg, &upstream)?.grads;
        drop(view);
        let boundary = boundary_terms(&set.params, cfg.lambda_boundary, &mut grads)?;
        trace.push(TraceRow {
            step,
            total: dm + boundary,
            data: dm,
            boundary,
        });
        adam.step(&mut set.params, &grads)?;
        clip_positions(&mut set, cfg.epsilon_clip);
    }
    Ok(DistillResult { set, trace })
}
