//! Small two-layer classifier used to measure how useful a (distilled)
//! training set is: `flatten -> dense -> ReLU -> dense -> softmax`,
//! trained full-batch with Adam on cross-entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledImageDataset;
use crate::error::{GsddError, Result};
use crate::layout::{DistilledSet, RenderConfig};
use crate::optim::AdamState;
use crate::raster::render_batched;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    pub hidden_width: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            hidden_width: 128,
            epochs: 300,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Parameters stored flat: `w1[h][d] | b1[h] | w2[k][h] | b2[k]`.
struct Mlp {
    d: usize,
    h: usize,
    k: usize,
    params: Vec<f32>,
}

impl Mlp {
    fn new(d: usize, h: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(h * d + h + k * h + k);
        let n1 = Normal::new(0.0, (2.0 / d as f64).sqrt()).expect("positive std");
        params.extend((0..h * d).map(|_| n1.sample(&mut rng) as f32));
        params.extend(std::iter::repeat_n(0.0, h));
        let n2 = Normal::new(0.0, (1.0 / h as f64).sqrt()).expect("positive std");
        params.extend((0..k * h).map(|_| n2.sample(&mut rng) as f32));
        params.extend(std::iter::repeat_n(0.0, k));
        Self { d, h, k, params }
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.h * self.d;
        let w2 = b1 + self.h;
        (b1, w2, w2 + self.k * self.h)
    }

    /// Hidden activations and logits.
    fn forward(&self, x: &[f32]) -> (Vec<f64>, Vec<f64>) {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let hidden: Vec<f64> = (0..self.h)
            .map(|j| {
                let row = &p[j * self.d..(j + 1) * self.d];
                let z: f64 = row
                    .iter()
                    .zip(x)
                    .map(|(&w, &v)| w as f64 * v as f64)
                    .sum::<f64>()
                    + p[b1 + j] as f64;
                z.max(0.0)
            })
            .collect();
        let logits = (0..self.k)
            .map(|c| {
                let row = &p[w2 + c * self.h..w2 + (c + 1) * self.h];
                row.iter()
                    .zip(&hidden)
                    .map(|(&w, &a)| w as f64 * a)
                    .sum::<f64>()
                    + p[b2 + c] as f64
            })
            .collect();
        (hidden, logits)
    }

    fn predict(&self, x: &[f32]) -> usize {
        let (_, logits) = self.forward(x);
        logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(c, _)| c)
    }

    /// Mean cross-entropy over the batch and its gradient.
    fn loss_grad(&self, xs: &[&[f32]], ys: &[usize]) -> (f64, Vec<f64>) {
        let (b1, w2, b2) = self.offsets();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let inv_n = 1.0 / xs.len() as f64;
        for (x, &y) in xs.iter().zip(ys) {
            let (hidden, logits) = self.forward(x);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            loss -= (exps[y] / sum).ln() * inv_n;
            let dlogits: Vec<f64> = exps
                .iter()
                .enumerate()
                .map(|(c, e)| (e / sum - if c == y { 1.0 } else { 0.0 }) * inv_n)
                .collect();
            let mut dhidden = vec![0.0; self.h];
            for (c, &dl) in dlogits.iter().enumerate() {
                grad[b2 + c] += dl;
                for j in 0..self.h {
                    grad[w2 + c * self.h + j] += dl * hidden[j];
                    dhidden[j] += dl * self.params[w2 + c * self.h + j] as f64;
                }
            }
            for j in 0..self.h {
                if hidden[j] <= 0.0 {
                    continue;
                }
                let dz = dhidden[j];
                grad[b1 + j] += dz;
                for (g, &v) in grad[j * self.d..(j + 1) * self.d].iter_mut().zip(x.iter()) {
                    *g += dz * v as f64;
                }
            }
        }
        (loss, grad)
    }
}

/// Trains on `train` and returns accuracy on `test`, in `[0, 1]`.
/// Single-threaded and fully determined by `spec.seed`.
pub fn train_eval_classifier(
    train: &LabeledImageDataset,
    test: &LabeledImageDataset,
    spec: &EvalSpec,
) -> Result<f64> {
    let geometry = train
        .geometry()
        .ok_or_else(|| GsddError::Empty("training set is empty".into()))?;
    if test.geometry().is_some_and(|g| g != geometry) {
        return Err(GsddError::Geometry("train and test geometry differ".into()));
    }
    if test.is_empty() {
        return Err(GsddError::Empty("test set is empty".into()));
    }
    let classes = train.class_count.max(test.class_count);
    if let Some(c) = (0..classes).find(|&c| !train.labels.contains(&c)) {
        return Err(GsddError::Empty(format!(
            "class {c} missing from the training set"
        )));
    }
    let (w, h, ch) = geometry;
    let mut mlp = Mlp::new(w * h * ch, spec.hidden_width, classes, spec.seed);
    let mut adam = AdamState::new(mlp.params.len(), spec.lr);
    let xs: Vec<&[f32]> = train.images.iter().map(|i| i.pixels.as_slice()).collect();
    for _ in 0..spec.epochs {
        let (_, grad) = mlp.loss_grad(&xs, &train.labels);
        adam.step(&mut mlp.params, &grad)?;
    }
    let correct = test
        .images
        .iter()
        .zip(&test.labels)
        .filter(|(img, &y)| mlp.predict(&img.pixels) == y)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Renders a distilled set into a labeled dataset carrying `stats` (the
/// normalization of the data it was distilled from).
pub fn render_dataset(
    set: &DistilledSet,
    render_cfg: &RenderConfig,
    stats: &crate::data::ChannelStats,
) -> Result<LabeledImageDataset> {
    let images = render_batched(set, render_cfg)?;
    let mut ds = LabeledImageDataset::new(images, set.labels.clone(), set.class_count)?;
    ds.stats = stats.clone();
    Ok(ds)
}
