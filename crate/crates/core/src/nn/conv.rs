//! 2-D convolution `(h_k)_ij = (W_k * x)_ij + b_k` with stride and zero padding.

use rayon::prelude::*;

use crate::error::NnError;
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }

    /// Output spatial size for an input extent and kernel extent.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

/// Owned convolution parameters: `K` filters over `C_in` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<R: Real> {
    /// Shape `(K, C_in, k_h, k_w)`.
    pub weights: Tensor<R>,
    pub bias: Vec<R>,
    pub stride: usize,
    pub padding: usize,
}

impl<R: Real> ConvParams<R> {
    pub fn new(weights: Tensor<R>, bias: Vec<R>, stride: usize, padding: usize) -> Result<Self, NnError> {
        let s = weights.shape();
        if s.n == 0 || s.h == 0 || s.w == 0 {
            return Err(NnError::ShapeMismatch {
                what: "convolution weights (K, k_h, k_w must be >= 1)",
                expected: Shape::new(1, s.c, 1, 1),
                actual: s,
            });
        }
        if bias.len() != s.n {
            return Err(NnError::LengthMismatch {
                what: "convolution bias",
                expected: s.n,
                actual: bias.len(),
            });
        }
        if stride == 0 {
            return Err(NnError::InvalidStride);
        }
        Ok(Self {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry::new(self.stride, self.padding)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<R: Real> {
    pub input: Tensor<R>,
    pub weights: Tensor<R>,
    pub bias: Vec<R>,
}

pub fn conv2d_forward<R: Real>(input: &Tensor<R>, params: &ConvParams<R>) -> Result<Tensor<R>, NnError> {
    conv2d_forward_raw(input, &params.weights, &params.bias, params.geometry())
}

pub fn conv2d_backward<R: Real>(
    input: &Tensor<R>,
    params: &ConvParams<R>,
    grad_out: &Tensor<R>,
) -> Result<ConvGrads<R>, NnError> {
    conv2d_backward_raw(input, &params.weights, &params.bias, params.geometry(), grad_out)
}

pub(crate) fn output_shape<R: Real>(
    input: Shape,
    weights: &Tensor<R>,
    bias_len: usize,
    geo: ConvGeometry,
) -> Result<Shape, NnError> {
    let ws = weights.shape();
    if input.c != ws.c {
        return Err(NnError::ShapeMismatch {
            what: "convolution input channels vs weights (K, C_in, k_h, k_w)",
            expected: Shape::new(input.n, ws.c, input.h, input.w),
            actual: input,
        });
    }
    if bias_len != ws.n {
        return Err(NnError::LengthMismatch {
            what: "convolution bias",
            expected: ws.n,
            actual: bias_len,
        });
    }
    if geo.stride == 0 {
        return Err(NnError::InvalidStride);
    }
    let empty = || NnError::EmptyConvOutput {
        input,
        kernel_h: ws.h,
        kernel_w: ws.w,
        stride: geo.stride,
        padding: geo.padding,
    };
    let oh = geo.output_extent(input.h, ws.h).ok_or_else(empty)?;
    let ow = geo.output_extent(input.w, ws.w).ok_or_else(empty)?;
    Ok(Shape::new(input.n, ws.n, oh, ow))
}

/// Range of output columns `j` for which `j*stride + tap - padding` lands in `0..extent`.
#[inline]
fn valid_range(extent: usize, out_extent: usize, tap: usize, geo: ConvGeometry) -> (usize, usize) {
    let s = geo.stride;
    let p = geo.padding;
    let lo = if tap >= p { 0 } else { (p - tap).div_ceil(s) };
    if extent + p <= tap {
        return (0, 0);
    }
    let hi = (extent + p - tap).div_ceil(s).min(out_extent);
    (lo.min(hi), hi)
}

/// Accumulates `alpha * src[(j*s + tap - p)]` into `dst[j]` over the valid range.
#[inline]
fn axpy_row<R: Real>(dst: &mut [R], src: &[R], alpha: R, tap: usize, geo: ConvGeometry) {
    let (lo, hi) = valid_range(src.len(), dst.len(), tap, geo);
    if lo >= hi {
        return;
    }
    let off = lo * geo.stride + tap - geo.padding;
    if geo.stride == 1 {
        for (d, &x) in dst[lo..hi].iter_mut().zip(&src[off..off + (hi - lo)]) {
            *d += alpha * x;
        }
    } else {
        for (k, d) in dst[lo..hi].iter_mut().enumerate() {
            *d += alpha * src[off + k * geo.stride];
        }
    }
}

pub(crate) fn conv2d_forward_raw<R: Real>(
    input: &Tensor<R>,
    weights: &Tensor<R>,
    bias: &[R],
    geo: ConvGeometry,
) -> Result<Tensor<R>, NnError> {
    let is = input.shape();
    let os = output_shape(is, weights, bias.len(), geo)?;
    let ws = weights.shape();
    let mut out = Tensor::zeros(os);
    let plane = os.plane();
    if plane == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, out_plane)| {
            let n = idx / os.c;
            let k = idx % os.c;
            out_plane.fill(bias[k]);
            for c in 0..is.c {
                let in_plane = input.plane(n, c);
                for ki in 0..ws.h {
                    for kj in 0..ws.w {
                        let wv = weights.get(k, c, ki, kj);
                        for i in 0..os.h {
                            let row = i * geo.stride + ki;
                            if row < geo.padding || row - geo.padding >= is.h {
                                continue;
                            }
                            let r = row - geo.padding;
                            axpy_row(
                                &mut out_plane[i * os.w..(i + 1) * os.w],
                                &in_plane[r * is.w..(r + 1) * is.w],
                                wv,
                                kj,
                                geo,
                            );
                        }
                    }
                }
            }
        });
    Ok(out)
}

pub(crate) fn conv2d_backward_raw<R: Real>(
    input: &Tensor<R>,
    weights: &Tensor<R>,
    bias: &[R],
    geo: ConvGeometry,
    grad_out: &Tensor<R>,
) -> Result<ConvGrads<R>, NnError> {
    let is = input.shape();
    let os = output_shape(is, weights, bias.len(), geo)?;
    if grad_out.shape() != os {
        return Err(NnError::ShapeMismatch {
            what: "convolution upstream gradient",
            expected: os,
            actual: grad_out.shape(),
        });
    }
    let ws = weights.shape();

    let grad_bias: Vec<R> = (0..os.c)
        .map(|k| {
            let mut acc = R::ZERO;
            for n in 0..os.n {
                for &g in grad_out.plane(n, k) {
                    acc += g;
                }
            }
            acc
        })
        .collect();

    let mut grad_w = Tensor::zeros(ws);
    let per_filter = ws.c * ws.h * ws.w;
    grad_w
        .data_mut()
        .par_chunks_mut(per_filter.max(1))
        .enumerate()
        .for_each(|(k, gw)| {
            for n in 0..os.n {
                let g_plane = grad_out.plane(n, k);
                for c in 0..is.c {
                    let in_plane = input.plane(n, c);
                    for ki in 0..ws.h {
                        for kj in 0..ws.w {
                            let (lo, hi) = valid_range(is.w, os.w, kj, geo);
                            let mut acc = R::ZERO;
                            for i in 0..os.h {
                                let row = i * geo.stride + ki;
                                if row < geo.padding || row - geo.padding >= is.h {
                                    continue;
                                }
                                let r = row - geo.padding;
                                let g_row = &g_plane[i * os.w..(i + 1) * os.w];
                                let x_row = &in_plane[r * is.w..(r + 1) * is.w];
                                for j in lo..hi {
                                    acc += g_row[j] * x_row[j * geo.stride + kj - geo.padding];
                                }
                            }
                            gw[(c * ws.h + ki) * ws.w + kj] += acc;
                        }
                    }
                }
            }
        });

    let mut grad_in = Tensor::zeros(is);
    let in_plane_len = is.plane();
    if in_plane_len > 0 {
        grad_in
            .data_mut()
            .par_chunks_mut(in_plane_len)
            .enumerate()
            .for_each(|(idx, gi)| {
                let n = idx / is.c;
                let c = idx % is.c;
                for k in 0..os.c {
                    let g_plane = grad_out.plane(n, k);
                    for ki in 0..ws.h {
                        for kj in 0..ws.w {
                            let wv = weights.get(k, c, ki, kj);
                            let (lo, hi) = valid_range(is.w, os.w, kj, geo);
                            for i in 0..os.h {
                                let row = i * geo.stride + ki;
                                if row < geo.padding || row - geo.padding >= is.h {
                                    continue;
                                }
                                let r = row - geo.padding;
                                let g_row = &g_plane[i * os.w..(i + 1) * os.w];
                                let dst = &mut gi[r * is.w..(r + 1) * is.w];
                                for j in lo..hi {
                                    dst[j * geo.stride + kj - geo.padding] += wv * g_row[j];
                                }
                            }
                        }
                    }
                }
            });
    }

    Ok(ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_bias,
    })
}
