use crate::error::{GsddError, Result};
use crate::grad::GradBuffer;
use crate::layout::{field, DistilledSet, PARAMS_PER_GAUSSIAN};
use crate::raster::ImageBuffer;

/// Mean squared error and its gradient with respect to `rendered`.
pub fn mse_loss_grad(rendered: &ImageBuffer, target: &ImageBuffer) -> Result<(f64, Vec<f64>)> {
    if !rendered.same_geometry(target) {
        return Err(GsddError::Geometry(
            "rendered and target images differ".into(),
        ));
    }
    let n = rendered.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = rendered
        .pixels
        .iter()
        .zip(&target.pixels)
        .map(|(&x, &t)| {
            let r = x as f64 - t as f64;
            loss += r * r;
            2.0 * r / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Peak signal-to-noise ratio in dB for a signal peak of `peak`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<f64> {
    let (mse, _) = mse_loss_grad(a, b)?;
    Ok(10.0 * (peak * peak / mse).log10())
}

/// `lambda * mean_k -[ln(1 - u_k^2) + ln(1 - v_k^2)]` over the Gaussians in
/// `params`, with gradients on `u`, `v` written into `grads` (added).
pub(crate) fn boundary_terms(params: &[f32], lambda: f64, grads: &mut [f64]) -> Result<f64> {
    let count = params.len() / PARAMS_PER_GAUSSIAN;
    if count == 0 {
        return Ok(0.0);
    }
    let scale = lambda / count as f64;
    let mut sum = 0.0;
    for (p, g) in params
        .chunks_exact(PARAMS_PER_GAUSSIAN)
        .zip(grads.chunks_exact_mut(PARAMS_PER_GAUSSIAN))
    {
        for f in [field::U, field::V] {
            let x = p[f] as f64;
            let one_minus = 1.0 - x * x;
            if one_minus <= 0.0 || x.is_nan() {
                return Err(GsddError::Boundary { value: x });
            }
            sum -= one_minus.ln();
            g[f] += scale * 2.0 * x / one_minus;
        }
    }
    Ok(sum * scale)
}

/// Boundary regularizer averaged over every Gaussian of every image.
/// Only the `u`, `v` slots of the returned gradient are nonzero.
pub fn boundary_loss(set: &DistilledSet, lambda: f64) -> Result<(f64, GradBuffer)> {
    let mut grads = GradBuffer::for_set(set);
    let loss = boundary_terms(&set.params, lambda, &mut grads.grads)?;
    Ok((loss, grads))
}
