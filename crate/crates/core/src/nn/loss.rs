//! Softmax classifier and cross-entropy loss over per-position class channels.

use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::tensor::{Real, Tensor};

/// Label value excluded from the loss.
pub const IGNORE_LABEL: u8 = 255;

/// Floor applied to a true-class probability before taking its logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Average over labeled positions.
    #[default]
    Mean,
    /// Sum over labeled positions.
    Sum,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax across the channel axis at every `(n, i, j)` position.
pub fn softmax_channels<R: Real>(logits: &Tensor<R>) -> Tensor<R> {
    let s = logits.shape();
    let plane = s.plane();
    let mut out = logits.clone();
    let src = logits.data();
    let dst = out.data_mut();
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let mut m = R::from_f64(f64::NEG_INFINITY);
            for c in 0..s.c {
                m = m.max(src[base + c * plane + p]);
            }
            let mut total = R::ZERO;
            for c in 0..s.c {
                let e = (src[base + c * plane + p] - m).exp();
                dst[base + c * plane + p] = e;
                total += e;
            }
            for c in 0..s.c {
                dst[base + c * plane + p] = dst[base + c * plane + p] / total;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossEntropy<R: Real> {
    pub loss: f64,
    /// Gradient with respect to the logits that produced `pred`.
    pub grad_logits: Tensor<R>,
    pub labeled_positions: usize,
    /// Positions whose true-class probability was floored at [`PROB_FLOOR`].
    pub clamped: usize,
}

/// `-sum P'(x) log P(x)` for probability map `pred` of shape `(n, n_cl, h, w)` and
/// one class label per `(n, i, j)` position.
pub fn cross_entropy_loss<R: Real>(
    pred: &Tensor<R>,
    labels: &[u8],
    reduction: Reduction,
) -> Result<CrossEntropy<R>, NnError> {
    let s = pred.shape();
    let plane = s.plane();
    if labels.len() != s.n * plane {
        return Err(NnError::LengthMismatch {
            what: "label map",
            expected: s.n * plane,
            actual: labels.len(),
        });
    }
    let labeled = labels.iter().filter(|&&l| l != IGNORE_LABEL).count();
    if labeled == 0 {
        return Err(NnError::NoLabeledPositions);
    }
    let scale = match reduction {
        Reduction::Mean => 1.0 / labeled as f64,
        Reduction::Sum => 1.0,
    };
    let scale_r = R::from_f64(scale);
    let mut grad = pred.clone();
    let mut loss = 0.0;
    let mut clamped = 0;
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let label = labels[n * plane + p];
            if label == IGNORE_LABEL {
                for c in 0..s.c {
                    grad.data_mut()[base + c * plane + p] = R::ZERO;
                }
                continue;
            }
            let label = label as usize;
            if label >= s.c {
                return Err(NnError::LabelOutOfRange {
                    label,
                    position: n * plane + p,
                    classes: s.c,
                });
            }
            let prob = pred.data()[base + label * plane + p].to_f64();
            if prob < PROB_FLOOR {
                clamped += 1;
            }
            loss -= prob.max(PROB_FLOOR).ln();
            for c in 0..s.c {
                let idx = base + c * plane + p;
                let onehot = if c == label { R::ONE } else { R::ZERO };
                grad.data_mut()[idx] = (pred.data()[idx] - onehot) * scale_r;
            }
        }
    }
    Ok(CrossEntropy {
        loss: loss * scale,
        grad_logits: grad,
        labeled_positions: labeled,
        clamped,
    })
}

/// Softmax over channels followed by cross-entropy.
pub fn softmax_cross_entropy<R: Real>(
    logits: &Tensor<R>,
    labels: &[u8],
    reduction: Reduction,
) -> Result<CrossEntropy<R>, NnError> {
    cross_entropy_loss(&softmax_channels(logits), labels, reduction)
}
