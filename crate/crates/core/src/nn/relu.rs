use crate::error::NnError;
use crate::tensor::{Real, Tensor};

pub fn relu<R: Real>(input: &Tensor<R>) -> Tensor<R> {
    input.map(|v| if v > R::ZERO { v } else { R::ZERO })
}

/// Upstream gradient masked by `input > 0`.
pub fn relu_backward<R: Real>(input: &Tensor<R>, grad_out: &Tensor<R>) -> Result<Tensor<R>, NnError> {
    input.ensure_same_shape(grad_out)?;
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= R::ZERO {
            *gv = R::ZERO;
        }
    }
    Ok(g)
}
