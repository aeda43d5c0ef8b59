//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so the check is independent of the
//! backward rules it validates.

use crate::tensor::Tensor;

/// Central difference estimate of `d f / d input[index]`.
pub fn central_difference<F>(f: &mut F, inputs: &[Tensor], which: usize, index: usize, h: f64) -> f64
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut plus = inputs.to_vec();
    plus[which].data_mut()[index] += h;
    let mut minus = inputs.to_vec();
    minus[which].data_mut()[index] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// `|a - n| / max(|a|, |n|, 1e-3)`: relative for ordinary gradients, and an
/// absolute 1e-6-scale comparison for gradients that are essentially zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / scale
}

/// Largest relative error over every entry of every input.
pub fn max_relative_error<F>(mut f: F, inputs: &[Tensor], analytic: &[Tensor], h: f64) -> f64
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut worst: f64 = 0.0;
    for (which, grad) in analytic.iter().enumerate() {
        for index in 0..grad.numel() {
            let numeric = central_difference(&mut f, inputs, which, index, h);
            worst = worst.max(relative_error(grad.data()[index], numeric));
        }
    }
    worst
}
