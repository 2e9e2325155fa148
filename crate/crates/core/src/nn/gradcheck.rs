//! Central finite differences for checking analytic gradients.

use crate::tensor::Tensor;

/// Default step for central differences in double precision.
pub const STEP: f64 = 1e-6;

/// Numerical gradient of a scalar objective `f` at `x` by central differences.
pub fn central_difference(x: &Tensor<f64>, step: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for idx in 0..x.len() {
        let orig = probe.data()[idx];
        probe.data_mut()[idx] = orig + step;
        let up = f(&probe);
        probe.data_mut()[idx] = orig - step;
        let down = f(&probe);
        probe.data_mut()[idx] = orig;
        grad.data_mut()[idx] = (up - down) / (2.0 * step);
    }
    grad
}

/// `||a - b|| / max(||a||, ||b||)` over the flattened tensors; 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Relative error between `analytic` and the central difference of `f` at `x`.
pub fn gradient_error(x: &Tensor<f64>, analytic: &Tensor<f64>, f: impl FnMut(&Tensor<f64>) -> f64) -> f64 {
    let numeric = central_difference(x, STEP, f);
    relative_error(analytic.data(), numeric.data())
}
