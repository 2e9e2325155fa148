//! Integer-factor upsampling as a per-channel fractionally-strided convolution.
//!
//! Output pixel `i` reads input rows `floor(i/f)` and `floor(i/f) + 1` (or
//! `floor(i/f) - 1` on grid points, where that tap has zero weight in the
//! bilinear kernel). Kernel taps are indexed by `t = i - f*m + f - 1` in
//! `0..2f`, so the bilinear kernel `1 - |t - (f-1)|/f` reproduces
//!
//! `y_ij = sum_{a,b in {0,1}} |1-a-{i/f}| |1-b-{j/f}| x_{floor(i/f)+a, floor(j/f)+b}`
//!
//! with indices past the border replicated from the edge. Grid points
//! `i = f*m` copy `x_m` exactly.

use crate::error::NnError;
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct UpsampleParams<R: Real> {
    pub factor: usize,
    /// Shape `(C, 1, 2f, 2f)`: one interpolation kernel per channel.
    pub kernel: Tensor<R>,
    pub trainable: bool,
}

impl<R: Real> UpsampleParams<R> {
    pub fn bilinear(channels: usize, factor: usize) -> Result<Self, NnError> {
        Ok(Self {
            factor,
            kernel: bilinear_kernel(channels, factor)?,
            trainable: false,
        })
    }
}

/// Analytic bilinear kernel for `factor`, replicated over `channels`.
pub fn bilinear_kernel<R: Real>(channels: usize, factor: usize) -> Result<Tensor<R>, NnError> {
    if factor == 0 {
        return Err(NnError::InvalidUpsampleFactor);
    }
    let f = factor as f64;
    let tap = |t: usize| 1.0 - (t as f64 - (f - 1.0)).abs() / f;
    Ok(Tensor::from_fn(
        Shape::new(channels, 1, 2 * factor, 2 * factor),
        |_, _, ti, tj| R::from_f64(tap(ti) * tap(tj)),
    ))
}

/// Two `(source index, kernel tap)` pairs per output coordinate.
fn taps(out_extent: usize, in_extent: usize, f: usize) -> Vec<[(usize, usize); 2]> {
    let clamp = |m: isize| m.clamp(0, in_extent as isize - 1) as usize;
    (0..out_extent)
        .map(|i| {
            let q = (i / f) as isize;
            let r = i % f;
            if r == 0 {
                [(clamp(q - 1), 2 * f - 1), (clamp(q), f - 1)]
            } else {
                [(clamp(q), r + f - 1), (clamp(q + 1), r - 1)]
            }
        })
        .collect()
}

fn check<R: Real>(input: &Tensor<R>, params: &UpsampleParams<R>) -> Result<Shape, NnError> {
    let f = params.factor;
    if f == 0 {
        return Err(NnError::InvalidUpsampleFactor);
    }
    let s = input.shape();
    let ks = params.kernel.shape();
    let expected = Shape::new(s.c, 1, 2 * f, 2 * f);
    if ks != expected {
        return Err(NnError::ShapeMismatch {
            what: "upsampling kernel",
            expected,
            actual: ks,
        });
    }
    Ok(Shape::new(s.n, s.c, s.h * f, s.w * f))
}

pub fn upsample_forward<R: Real>(input: &Tensor<R>, params: &UpsampleParams<R>) -> Result<Tensor<R>, NnError> {
    let os = check(input, params)?;
    let is = input.shape();
    let f = params.factor;
    let k2 = 2 * f;
    let row_taps = taps(os.h, is.h, f);
    let col_taps = taps(os.w, is.w, f);
    let mut out = Tensor::zeros(os);
    for n in 0..is.n {
        for c in 0..is.c {
            let x = input.plane(n, c);
            let kernel = params.kernel.plane(c, 0);
            let y = out.plane_mut(n, c);
            for (i, rt) in row_taps.iter().enumerate() {
                for (j, ct) in col_taps.iter().enumerate() {
                    let mut acc = R::ZERO;
                    for &(m, ti) in rt {
                        for &(q, tj) in ct {
                            acc += kernel[ti * k2 + tj] * x[m * is.w + q];
                        }
                    }
                    y[i * os.w + j] = acc;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpsampleGrads<R: Real> {
    pub input: Tensor<R>,
    pub kernel: Tensor<R>,
}

pub fn upsample_backward<R: Real>(
    input: &Tensor<R>,
    params: &UpsampleParams<R>,
    grad_out: &Tensor<R>,
) -> Result<UpsampleGrads<R>, NnError> {
    let os = check(input, params)?;
    if grad_out.shape() != os {
        return Err(NnError::ShapeMismatch {
            what: "upsampling upstream gradient",
            expected: os,
            actual: grad_out.shape(),
        });
    }
    let is = input.shape();
    let f = params.factor;
    let k2 = 2 * f;
    let row_taps = taps(os.h, is.h, f);
    let col_taps = taps(os.w, is.w, f);
    let mut gx = Tensor::zeros(is);
    let mut gk = Tensor::zeros(params.kernel.shape());
    for n in 0..is.n {
        for c in 0..is.c {
            let x = input.plane(n, c);
            let kernel = params.kernel.plane(c, 0);
            let g = grad_out.plane(n, c);
            let mut gkc = vec![R::ZERO; k2 * k2];
            let gxc = gx.plane_mut(n, c);
            for (i, rt) in row_taps.iter().enumerate() {
                for (j, ct) in col_taps.iter().enumerate() {
                    let gv = g[i * os.w + j];
                    for &(m, ti) in rt {
                        for &(q, tj) in ct {
                            gxc[m * is.w + q] += kernel[ti * k2 + tj] * gv;
                            gkc[ti * k2 + tj] += gv * x[m * is.w + q];
                        }
                    }
                }
            }
            for (dst, v) in gk.plane_mut(c, 0).iter_mut().zip(gkc) {
                *dst += v;
            }
        }
    }
    Ok(UpsampleGrads { input: gx, kernel: gk })
}
