//! Fixed random convolutional feature extractor and the
//! distribution-matching loss built on it.
//!
//! Each block is `conv3x3(pad 1) -> ReLU -> avgpool 2x2`. Weights are drawn
//! once from a He-scaled normal and never trained; only gradients with
//! respect to the input are needed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GsddError, Result};
use crate::raster::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureNetSpec {
    pub depth: usize,
    /// Output channels of every conv block.
    pub width: usize,
    pub seed: u64,
}

impl Default for FeatureNetSpec {
    fn default() -> Self {
        Self {
            depth: 3,
            width: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    cin: usize,
    cout: usize,
    /// `[cout][cin][3][3]`
    weights: Vec<f64>,
}

impl ConvLayer {
    /// CHW in, CHW out, same spatial size. Computed as a product of the
    /// `[cout][cin*9]` weights with the im2col matrix of the input.
    fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let hw = h * w;
        let cols = im2col(input, self.cin, h, w);
        let mut out = vec![0.0; self.cout * hw];
        for (o, plane) in out.chunks_exact_mut(hw).enumerate() {
            let row = &self.weights[o * self.cin * 9..(o + 1) * self.cin * 9];
            for (&k, col) in row.iter().zip(cols.chunks_exact(hw)) {
                for (d, s) in plane.iter_mut().zip(col) {
                    *d += k * s;
                }
            }
        }
        out
    }

    /// Gradient with respect to the input given the gradient of the output.
    fn backward_input(&self, dout: &[f64], h: usize, w: usize) -> Vec<f64> {
        let hw = h * w;
        let mut dcols = vec![0.0; self.cin * 9 * hw];
        for (o, g) in dout.chunks_exact(hw).enumerate() {
            let row = &self.weights[o * self.cin * 9..(o + 1) * self.cin * 9];
            for (&k, dcol) in row.iter().zip(dcols.chunks_exact_mut(hw)) {
                for (d, s) in dcol.iter_mut().zip(g) {
                    *d += k * s;
                }
            }
        }
        col2im(&dcols, self.cin, h, w)
    }
}

/// Row `(i*3 + ky)*3 + kx` holds input channel `i` shifted by
/// `(ky - 1, kx - 1)`, zero outside the image.
fn im2col(input: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; cin * 9 * hw];
    for i in 0..cin {
        let src = &input[i * hw..(i + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let col = &mut cols[((i * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let Some(sy) = (y + ky).checked_sub(1).filter(|&sy| sy < h) else {
                        continue;
                    };
                    for x in 0..w {
                        if let Some(sx) = (x + kx).checked_sub(1).filter(|&sx| sx < w) {
                            col[y * w + x] = src[sy * w + sx];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; cin * hw];
    for i in 0..cin {
        let dst = &mut out[i * hw..(i + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let col = &cols[((i * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let Some(sy) = (y + ky).checked_sub(1).filter(|&sy| sy < h) else {
                        continue;
                    };
                    for x in 0..w {
                        if let Some(sx) = (x + kx).checked_sub(1).filter(|&sx| sx < w) {
                            dst[sy * w + sx] += col[y * w + x];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Intermediate values of one forward pass, kept for the backward pass.
struct Trace {
    /// Pre-activation of every block, CHW, with its spatial size.
    pre: Vec<(Vec<f64>, usize, usize)>,
    features: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FeatureNet {
    pub spec: FeatureNetSpec,
    pub in_channels: usize,
    layers: Vec<ConvLayer>,
}

fn hwc_to_chw(img: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for p in 0..h * w {
        for ch in 0..c {
            out[ch * h * w + p] = img[p * c + ch];
        }
    }
    out
}

fn chw_to_hwc(img: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for p in 0..h * w {
        for ch in 0..c {
            out[p * c + ch] = img[ch * h * w + p];
        }
    }
    out
}

impl FeatureNet {
    pub fn new(spec: FeatureNetSpec, in_channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut layers = Vec::with_capacity(spec.depth);
        let mut cin = in_channels;
        for _ in 0..spec.depth {
            let std = (2.0 / (9.0 * cin as f64)).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let weights = (0..spec.width * cin * 9)
                .map(|_| normal.sample(&mut rng))
                .collect();
            layers.push(ConvLayer {
                cin,
                cout: spec.width,
                weights,
            });
            cin = spec.width;
        }
        Self {
            spec,
            in_channels,
            layers,
        }
    }

    /// Identity extractor (depth 0).
    pub fn identity(in_channels: usize) -> Self {
        Self::new(
            FeatureNetSpec {
                depth: 0,
                width: in_channels,
                seed: 0,
            },
            in_channels,
        )
    }

    pub fn check_input(&self, img: &ImageBuffer) -> Result<()> {
        if img.channels != self.in_channels {
            return Err(GsddError::Geometry(format!(
                "feature net expects {} channels, got {}",
                self.in_channels, img.channels
            )));
        }
        if (img.width >> self.layers.len()) == 0 || (img.height >> self.layers.len()) == 0 {
            return Err(GsddError::Geometry(format!(
                "{}x{} input too small for depth {}",
                img.width,
                img.height,
                self.layers.len()
            )));
        }
        Ok(())
    }

    fn trace(&self, img: &ImageBuffer) -> Trace {
        let (mut h, mut w) = (img.height, img.width);
        let mut x = hwc_to_chw(&img.to_f64(), h, w, img.channels);
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = layer.forward(&x, h, w);
            let (ph, pw) = (h / 2, w / 2);
            let mut pooled = vec![0.0; layer.cout * ph * pw];
            for o in 0..layer.cout {
                for y in 0..ph {
                    for xx in 0..pw {
                        let mut s = 0.0;
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            s += z[(o * h + 2 * y + dy) * w + 2 * xx + dx].max(0.0);
                        }
                        pooled[(o * ph + y) * pw + xx] = 0.25 * s;
                    }
                }
            }
            pre.push((z, h, w));
            x = pooled;
            h = ph;
            w = pw;
        }
        Trace { pre, features: x }
    }

    /// Flattened output features.
    pub fn forward(&self, img: &ImageBuffer) -> Vec<f64> {
        if self.layers.is_empty() {
            return img.to_f64();
        }
        self.trace(img).features
    }

    pub fn feature_len(&self, width: usize, height: usize) -> usize {
        if self.layers.is_empty() {
            return width * height * self.in_channels;
        }
        let d = self.layers.len();
        (width >> d) * (height >> d) * self.spec.width
    }

    /// Input gradient (HWC, like the image) for a gradient on the features.
    fn backward(&self, img: &ImageBuffer, trace: &Trace, dfeat: &[f64]) -> Vec<f64> {
        let mut g = dfeat.to_vec();
        for (layer, (z, h, w)) in self.layers.iter().zip(&trace.pre).rev() {
            let (h, w) = (*h, *w);
            let (ph, pw) = (h / 2, w / 2);
            let mut dz = vec![0.0; layer.cout * h * w];
            for o in 0..layer.cout {
                for y in 0..ph {
                    for xx in 0..pw {
                        let gp = 0.25 * g[(o * ph + y) * pw + xx];
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let idx = (o * h + 2 * y + dy) * w + 2 * xx + dx;
                            if z[idx] > 0.0 {
                                dz[idx] = gp;
                            }
                        }
                    }
                }
            }
            g = layer.backward_input(&dz, h, w);
        }
        if self.layers.is_empty() {
            g
        } else {
            chw_to_hwc(&g, img.height, img.width, img.channels)
        }
    }
}

/// Distribution-matching loss over classes:
/// `sum_c || mean_f(real_c) - mean_f(syn_c) ||^2`, with gradients on every
/// synthetic image (HWC, one buffer per image, grouped by class).
pub fn dm_loss_grad(
    real: &[Vec<&ImageBuffer>],
    syn: &[Vec<&ImageBuffer>],
    net: &FeatureNet,
) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
    if real.len() != syn.len() {
        return Err(GsddError::Geometry(
            "real and synthetic class counts differ".into(),
        ));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(syn.len());
    for (class, (r, s)) in real.iter().zip(syn).enumerate() {
        if r.is_empty() || s.is_empty() {
            return Err(GsddError::Empty(format!(
                "class {class} has an empty batch"
            )));
        }
        for img in r.iter().chain(s) {
            net.check_input(img)?;
        }
        let real_mean = mean_features(r, net);
        let syn_traces: Vec<Trace> = s.par_iter().map(|img| net.trace_or_identity(img)).collect();
        let n = s.len() as f64;
        let mut syn_mean = vec![0.0; real_mean.len()];
        for t in &syn_traces {
            for (m, f) in syn_mean.iter_mut().zip(&t.features) {
                *m += f;
            }
        }
        syn_mean.iter_mut().for_each(|m| *m /= n);
        let diff: Vec<f64> = syn_mean
            .iter()
            .zip(&real_mean)
            .map(|(a, b)| a - b)
            .collect();
        loss += diff.iter().map(|d| d * d).sum::<f64>();
        let dfeat: Vec<f64> = diff.iter().map(|d| 2.0 * d / n).collect();
        let class_grads = s
            .par_iter()
            .zip(&syn_traces)
            .map(|(img, t)| net.backward(img, t, &dfeat))
            .collect();
        grads.push(class_grads);
    }
    Ok((loss, grads))
}

fn mean_features(images: &[&ImageBuffer], net: &FeatureNet) -> Vec<f64> {
    let feats: Vec<Vec<f64>> = images.par_iter().map(|img| net.forward(img)).collect();
    let mut mean = vec![0.0; feats[0].len()];
    for f in &feats {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    let n = feats.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

impl FeatureNet {
    fn trace_or_identity(&self, img: &ImageBuffer) -> Trace {
        if self.layers.is_empty() {
            Trace {
                pre: Vec::new(),
                features: img.to_f64(),
            }
        } else {
            self.trace(img)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(rng: &mut impl Rng, w: usize, h: usize, c: usize) -> ImageBuffer {
        ImageBuffer::from_pixels(
            w,
            h,
            c,
            (0..w * h * c)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let layer = ConvLayer {
            cin: 2,
            cout: 3,
            weights: (0..54).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let (h, w) = (5, 4);
        let input: Vec<f64> = (0..2 * h * w)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let out = layer.forward(&input, h, w);
        for o in 0..3 {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = 0.0;
                    for i in 0..2 {
                        for ky in -1..=1isize {
                            for kx in -1..=1isize {
                                let (sy, sx) = (y + ky, x + kx);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let k = layer.weights
                                    [((o * 2 + i) * 3 + (ky + 1) as usize) * 3 + (kx + 1) as usize];
                                acc += k * input[i * h * w + sy as usize * w + sx as usize];
                            }
                        }
                    }
                    assert!((out[o * h * w + y as usize * w + x as usize] - acc).abs() < 1e-12);
                }
            }
        }
        // adjoint identity: <conv(x), g> == <x, conv^T(g)>
        let g: Vec<f64> = (0..3 * h * w)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let lhs: f64 = out.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = input
            .iter()
            .zip(&layer.backward_input(&g, h, w))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn identical_batches_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let imgs: Vec<ImageBuffer> = (0..3).map(|_| random_image(&mut rng, 8, 8, 3)).collect();
        let refs: Vec<&ImageBuffer> = imgs.iter().collect();
        let net = FeatureNet::new(
            FeatureNetSpec {
                depth: 2,
                width: 4,
                seed: 3,
            },
            3,
        );
        let (loss, grads) = dm_loss_grad(&[refs.clone()], &[refs], &net).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads[0].iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn identity_net_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let real: Vec<ImageBuffer> = (0..4).map(|_| random_image(&mut rng, 3, 2, 3)).collect();
        let syn: Vec<ImageBuffer> = (0..2).map(|_| random_image(&mut rng, 3, 2, 3)).collect();
        let mean = |v: &[ImageBuffer]| -> Vec<f64> {
            let mut m = vec![0.0; 18];
            for img in v {
                for (a, b) in m.iter_mut().zip(&img.pixels) {
                    *a += *b as f64 / v.len() as f64;
                }
            }
            m
        };
        let (rm, sm) = (mean(&real), mean(&syn));
        let expected: f64 = rm.iter().zip(&sm).map(|(r, s)| (r - s) * (r - s)).sum();
        let net = FeatureNet::identity(3);
        let (loss, grads) =
            dm_loss_grad(&[real.iter().collect()], &[syn.iter().collect()], &net).unwrap();
        assert!((loss - expected).abs() < 1e-12);
        for g in &grads[0] {
            for (i, gi) in g.iter().enumerate() {
                assert!((gi - 2.0 * (sm[i] - rm[i]) / 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swap_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<ImageBuffer> = (0..3).map(|_| random_image(&mut rng, 8, 8, 3)).collect();
        let b: Vec<ImageBuffer> = (0..3).map(|_| random_image(&mut rng, 8, 8, 3)).collect();
        let net = FeatureNet::new(
            FeatureNetSpec {
                depth: 2,
                width: 5,
                seed: 9,
            },
            3,
        );
        let (l1, _) = dm_loss_grad(&[a.iter().collect()], &[b.iter().collect()], &net).unwrap();
        let (l2, _) = dm_loss_grad(&[b.iter().collect()], &[a.iter().collect()], &net).unwrap();
        assert!((l1 - l2).abs() <= 1e-12 * l1.abs());

        let id = FeatureNet::identity(3);
        let (_, g1) = dm_loss_grad(&[vec![&a[0]]], &[vec![&b[0]]], &id).unwrap();
        let (_, g2) = dm_loss_grad(&[vec![&b[0]]], &[vec![&a[0]]], &id).unwrap();
        for (x, y) in g1[0][0].iter().zip(&g2[0][0]) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn input_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let real: Vec<ImageBuffer> = (0..3).map(|_| random_image(&mut rng, 8, 8, 3)).collect();
        let syn: Vec<ImageBuffer> = (0..2).map(|_| random_image(&mut rng, 8, 8, 3)).collect();
        let net = FeatureNet::new(
            FeatureNetSpec {
                depth: 2,
                width: 6,
                seed: 21,
            },
            3,
        );
        let loss_at = |syn: &[ImageBuffer]| {
            dm_loss_grad(&[real.iter().collect()], &[syn.iter().collect()], &net).unwrap()
        };
        let (_, grads) = loss_at(&syn);
        let h = 1e-4f32;
        let mut worst = 0.0f64;
        for img in 0..syn.len() {
            for p in (0..syn[img].len()).step_by(7) {
                let mut plus = syn.clone();
                plus[img].pixels[p] += h;
                let mut minus = syn.clone();
                minus[img].pixels[p] -= h;
                let step = plus[img].pixels[p] as f64 - minus[img].pixels[p] as f64;
                let numeric = (loss_at(&plus).0 - loss_at(&minus).0) / step;
                let analytic = grads[0][img][p];
                worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1e-3));
            }
        }
        assert!(worst <= 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn empty_batch_rejected() {
        let img = ImageBuffer::zeros(4, 4, 3);
        let net = FeatureNet::identity(3);
        assert!(dm_loss_grad(&[vec![&img]], &[vec![]], &net).is_err());
        assert!(dm_loss_grad(&[vec![]], &[vec![&img]], &net).is_err());
    }

    #[test]
    fn weights_are_seeded() {
        let spec = FeatureNetSpec {
            depth: 2,
            width: 4,
            seed: 5,
        };
        let img =
            ImageBuffer::from_pixels(4, 4, 1, (0..16).map(|i| i as f32 / 16.0).collect()).unwrap();
        let a = FeatureNet::new(spec, 1).forward(&img);
        let b = FeatureNet::new(spec, 1).forward(&img);
        assert_eq!(a, b);
        assert_eq!(a.len(), FeatureNet::new(spec, 1).feature_len(4, 4));
    }
}
