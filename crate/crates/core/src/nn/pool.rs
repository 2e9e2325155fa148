//! Max pooling without padding; ties resolve to the first maximum in row-major order.

use crate::error::NnError;
use crate::tensor::{Real, Shape, Tensor};

/// Source positions selected by a max-pool forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndex {
    pub input_shape: Shape,
    pub output_shape: Shape,
    /// Flat input index for every output element.
    pub argmax: Vec<usize>,
}

pub fn maxpool_forward<R: Real>(
    input: &Tensor<R>,
    window: (usize, usize),
    stride: usize,
) -> Result<(Tensor<R>, PoolIndex), NnError> {
    let is = input.shape();
    let (ph, pw) = window;
    if stride == 0 {
        return Err(NnError::InvalidStride);
    }
    if ph == 0 || pw == 0 || ph > is.h || pw > is.w {
        return Err(NnError::WindowTooLarge {
            input: is,
            window_h: ph,
            window_w: pw,
        });
    }
    let os = Shape::new(is.n, is.c, (is.h - ph) / stride + 1, (is.w - pw) / stride + 1);
    let mut out = Tensor::zeros(os);
    let mut argmax = Vec::with_capacity(os.len());
    let data = input.data();
    for n in 0..is.n {
        for c in 0..is.c {
            let base = input.index(n, c, 0, 0);
            for i in 0..os.h {
                for j in 0..os.w {
                    let mut best = base + i * stride * is.w + j * stride;
                    for di in 0..ph {
                        let row = base + (i * stride + di) * is.w + j * stride;
                        for (dj, &v) in data[row..row + pw].iter().enumerate() {
                            if v > data[best] {
                                best = row + dj;
                            }
                        }
                    }
                    out.set(n, c, i, j, data[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((
        out,
        PoolIndex {
            input_shape: is,
            output_shape: os,
            argmax,
        },
    ))
}

pub fn maxpool_backward<R: Real>(index: &PoolIndex, grad_out: &Tensor<R>) -> Result<Tensor<R>, NnError> {
    if grad_out.shape() != index.output_shape || index.argmax.len() != index.output_shape.len() {
        return Err(NnError::ShapeMismatch {
            what: "max-pool index map vs upstream gradient",
            expected: index.output_shape,
            actual: grad_out.shape(),
        });
    }
    let mut grad_in = Tensor::zeros(index.input_shape);
    let gi = grad_in.data_mut();
    for (&src, &g) in index.argmax.iter().zip(grad_out.data()) {
        gi[src] += g;
    }
    Ok(grad_in)
}
