use rand::Rng;

use super::gradcheck::gradient_error;
use crate::tensor::{Shape, Tensor};

pub fn random_tensor(rng: &mut impl Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

pub fn check_gradient(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    f: impl FnMut(&Tensor<f64>) -> f64,
    tolerance: f64,
) {
    let err = gradient_error(x, analytic, f);
    assert!(err < tolerance, "relative gradient error {err:e} exceeds {tolerance:e}");
}
