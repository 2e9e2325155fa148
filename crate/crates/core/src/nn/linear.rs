//! Fully-connected layer `y_k = sum_l W_kl x_l + b_k`.

use crate::error::NnError;
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct FcParams<R: Real> {
    /// Shape `(out_dim, in_dim, 1, 1)`.
    pub weights: Tensor<R>,
    pub bias: Vec<R>,
}

impl<R: Real> FcParams<R> {
    pub fn new(weights: Tensor<R>, bias: Vec<R>) -> Result<Self, NnError> {
        check_params(&weights, &bias)?;
        Ok(Self { weights, bias })
    }

    /// Builds from a row-major `out_dim x in_dim` matrix.
    pub fn from_rows(rows: &[Vec<R>], bias: Vec<R>) -> Result<Self, NnError> {
        let in_dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * in_dim);
        for r in rows {
            if r.len() != in_dim {
                return Err(NnError::LengthMismatch {
                    what: "fully-connected weight row",
                    expected: in_dim,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(Tensor::from_vec(Shape::new(rows.len(), in_dim, 1, 1), data)?, bias)
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape().n
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape().c
    }
}

fn check_params<R: Real>(weights: &Tensor<R>, bias: &[R]) -> Result<(), NnError> {
    let s = weights.shape();
    if s.h != 1 || s.w != 1 {
        return Err(NnError::ShapeMismatch {
            what: "fully-connected weights",
            expected: Shape::new(s.n, s.c, 1, 1),
            actual: s,
        });
    }
    if bias.len() != s.n {
        return Err(NnError::LengthMismatch {
            what: "fully-connected bias",
            expected: s.n,
            actual: bias.len(),
        });
    }
    Ok(())
}

pub fn fc_forward<R: Real>(input: &[R], params: &FcParams<R>) -> Result<Vec<R>, NnError> {
    let x = Tensor::from_vec(Shape::new(1, input.len(), 1, 1), input.to_vec())?;
    Ok(fc_forward_batch(&x, &params.weights, &params.bias)?.into_vec())
}

/// Applies the layer to every sample of a batch, flattening `(c, h, w)`.
pub(crate) fn fc_forward_batch<R: Real>(
    input: &Tensor<R>,
    weights: &Tensor<R>,
    bias: &[R],
) -> Result<Tensor<R>, NnError> {
    check_params(weights, bias)?;
    let is = input.shape();
    let (out_dim, in_dim) = (weights.shape().n, weights.shape().c);
    let per = is.c * is.plane();
    if per != in_dim {
        return Err(NnError::LengthMismatch {
            what: "fully-connected input",
            expected: in_dim,
            actual: per,
        });
    }
    let w = weights.data();
    let mut out = Tensor::zeros(Shape::new(is.n, out_dim, 1, 1));
    for n in 0..is.n {
        let x = &input.data()[n * per..(n + 1) * per];
        for k in 0..out_dim {
            let row = &w[k * in_dim..(k + 1) * in_dim];
            let mut acc = bias[k];
            for (&wv, &xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            out.data_mut()[n * out_dim + k] = acc;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcGrads<R: Real> {
    pub input: Tensor<R>,
    pub weights: Tensor<R>,
    pub bias: Vec<R>,
}

/// Gradients of [`fc_forward`] for one input vector.
pub fn fc_backward<R: Real>(input: &[R], params: &FcParams<R>, grad_out: &[R]) -> Result<FcGrads<R>, NnError> {
    check_params(&params.weights, &params.bias)?;
    let x = Tensor::from_vec(Shape::new(1, input.len(), 1, 1), input.to_vec())?;
    let g = Tensor::from_vec(Shape::new(1, grad_out.len(), 1, 1), grad_out.to_vec())?;
    fc_backward_batch(&x, &params.weights, &g)
}

pub(crate) fn fc_backward_batch<R: Real>(
    input: &Tensor<R>,
    weights: &Tensor<R>,
    grad_out: &Tensor<R>,
) -> Result<FcGrads<R>, NnError> {
    let is = input.shape();
    let (out_dim, in_dim) = (weights.shape().n, weights.shape().c);
    let expected = Shape::new(is.n, out_dim, 1, 1);
    if grad_out.shape() != expected {
        return Err(NnError::ShapeMismatch {
            what: "fully-connected upstream gradient",
            expected,
            actual: grad_out.shape(),
        });
    }
    let per = is.c * is.plane();
    if per != in_dim {
        return Err(NnError::LengthMismatch {
            what: "fully-connected input",
            expected: in_dim,
            actual: per,
        });
    }
    let w = weights.data();
    let g = grad_out.data();
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = vec![R::ZERO; out_dim];
    let mut gx = Tensor::zeros(is);
    for n in 0..is.n {
        let x = &input.data()[n * per..(n + 1) * per];
        let gxn = &mut gx.data_mut()[n * per..(n + 1) * per];
        for k in 0..out_dim {
            let gk = g[n * out_dim + k];
            gb[k] += gk;
            let row = &w[k * in_dim..(k + 1) * in_dim];
            let grow = &mut gw.data_mut()[k * in_dim..(k + 1) * in_dim];
            for l in 0..in_dim {
                grow[l] += gk * x[l];
                gxn[l] += row[l] * gk;
            }
        }
    }
    Ok(FcGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}
