use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_index, GsddError, Result};
use crate::raster::ImageBuffer;

/// Per-channel normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Mean and population standard deviation of each channel over all
    /// pixels of all images.
    pub fn compute(images: &[ImageBuffer]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| GsddError::Empty("no images for statistics".into()))?;
        let ch = first.channels;
        let mut sum = vec![0.0f64; ch];
        let mut sq = vec![0.0f64; ch];
        let mut count = 0usize;
        for img in images {
            for px in img.pixels.chunks_exact(ch) {
                for c in 0..ch {
                    let v = px[c] as f64;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += img.width * img.height;
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / n - m * m).max(0.0).sqrt().max(1e-6)) as f32)
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    #[inline]
    pub fn normalize_value(&self, c: usize, v: f32) -> f32 {
        (v - self.mean[c]) / self.std[c]
    }

    #[inline]
    pub fn denormalize_value(&self, c: usize, v: f32) -> f32 {
        v * self.std[c] + self.mean[c]
    }

    pub fn normalize(&self, img: &mut ImageBuffer) {
        let ch = img.channels;
        for px in img.pixels.chunks_exact_mut(ch) {
            for (c, v) in px.iter_mut().enumerate() {
                *v = self.normalize_value(c, *v);
            }
        }
    }

    pub fn denormalize(&self, img: &mut ImageBuffer) {
        let ch = img.channels;
        for px in img.pixels.chunks_exact_mut(ch) {
            for (c, v) in px.iter_mut().enumerate() {
                *v = self.denormalize_value(c, *v);
            }
        }
    }
}

/// Labeled images sharing one geometry. `stats` records the normalization
/// already applied to `images` (identity for raw data).
#[derive(Debug, Clone)]
pub struct LabeledImageDataset {
    pub images: Vec<ImageBuffer>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub stats: ChannelStats,
}

impl LabeledImageDataset {
    pub fn new(images: Vec<ImageBuffer>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let channels = images.first().map_or(3, |i| i.channels);
        let ds = Self {
            images,
            labels,
            class_count,
            stats: ChannelStats::identity(channels),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(GsddError::Geometry(
                "images and labels differ in length".into(),
            ));
        }
        if let Some(first) = self.images.first() {
            if self.images.iter().any(|i| !i.same_geometry(first)) {
                return Err(GsddError::Geometry("images differ in geometry".into()));
            }
        }
        for &l in &self.labels {
            check_index("label", l, self.class_count)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `(width, height, channels)` of the images.
    pub fn geometry(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(|i| (i.width, i.height, i.channels))
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect()
    }

    /// Normalizes with statistics computed from this dataset.
    pub fn normalized(self) -> Result<Self> {
        let stats = ChannelStats::compute(&self.images)?;
        Ok(self.normalized_with(stats))
    }

    /// Normalizes with externally supplied statistics (e.g. the training
    /// split's, for a test split).
    pub fn normalized_with(mut self, stats: ChannelStats) -> Self {
        for img in &mut self.images {
            stats.normalize(img);
        }
        self.stats = stats;
        self
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            stats: self.stats.clone(),
        }
    }
}

/// Synthetic two-or-more-class dataset of colored blobs on noisy backgrounds.
/// Class `c` places its blob around a class-specific anchor on a circle;
/// blob color, size and jitter are shared across classes, so only position
/// separates the classes. Pixels are in `[0, 1]`.
pub fn toy_blobs(
    per_class: usize,
    class_count: usize,
    size: usize,
    seed: u64,
) -> Result<LabeledImageDataset> {
    if class_count < 2 || size < 4 {
        return Err(GsddError::Config(
            "toy data needs >= 2 classes and size >= 4".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.08).expect("valid sigma");
    let s = size as f32;
    let mut images = Vec::with_capacity(per_class * class_count);
    let mut labels = Vec::with_capacity(per_class * class_count);
    for i in 0..per_class * class_count {
        let class = i % class_count;
        let angle = std::f32::consts::TAU * class as f32 / class_count as f32;
        let cx = s * (0.5 + 0.22 * angle.cos()) + rng.random_range(-0.15..0.15) * s;
        let cy = s * (0.5 + 0.22 * angle.sin()) + rng.random_range(-0.15..0.15) * s;
        let sigma = rng.random_range(0.1..0.2) * s;
        let color: [f32; 3] = [
            rng.random_range(0.4..1.0),
            rng.random_range(0.4..1.0),
            rng.random_range(0.4..1.0),
        ];
        let bg: f32 = rng.random_range(0.1..0.35);
        let mut pixels = Vec::with_capacity(size * size * 3);
        for y in 0..size {
            for x in 0..size {
                let dx = x as f32 + 0.5 - cx;
                let dy = y as f32 + 0.5 - cy;
                let g = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                for c in color {
                    let v = bg * (1.0 - g) + c * g + noise.sample(&mut rng);
                    pixels.push(v.clamp(0.0, 1.0));
                }
            }
        }
        images.push(ImageBuffer::from_pixels(size, size, 3, pixels)?);
        labels.push(class);
    }
    LabeledImageDataset::new(images, labels, class_count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_and_normalization() {
        let a = ImageBuffer::from_pixels(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let ds = LabeledImageDataset::new(vec![a], vec![0], 1).unwrap();
        let ds = ds.normalized().unwrap();
        assert_eq!(ds.stats.mean, vec![0.5]);
        assert_eq!(ds.stats.std, vec![0.5]);
        assert_eq!(ds.images[0].pixels, vec![-1.0, 1.0]);
        let mut back = ds.images[0].clone();
        ds.stats.denormalize(&mut back);
        assert_eq!(back.pixels, vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_labels_and_geometry() {
        let a = ImageBuffer::zeros(2, 2, 3);
        let b = ImageBuffer::zeros(3, 2, 3);
        assert!(LabeledImageDataset::new(vec![a.clone()], vec![2], 2).is_err());
        assert!(LabeledImageDataset::new(vec![a, b], vec![0, 1], 2).is_err());
    }

    #[test]
    fn toy_is_deterministic_and_balanced() {
        let a = toy_blobs(5, 2, 16, 1).unwrap();
        let b = toy_blobs(5, 2, 16, 1).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.indices_of_class(0).len(), 5);
        assert_eq!(a.indices_of_class(1).len(), 5);
        assert!(a
            .images
            .iter()
            .all(|i| i.pixels.iter().all(|v| (0.0..=1.0).contains(v))));
    }
}
