use crate::error::NnError;
use crate::tensor::{Real, Tensor};

/// Fuses upsampled coarse scores with finer skip scores by elementwise sum.
pub fn skip_fuse<R: Real>(coarse_scores: &Tensor<R>, fine_scores: &Tensor<R>) -> Result<Tensor<R>, NnError> {
    if coarse_scores.shape() != fine_scores.shape() {
        return Err(NnError::ShapeMismatch {
            what: "skip fusion (upsampled coarse vs fine scores)",
            expected: fine_scores.shape(),
            actual: coarse_scores.shape(),
        });
    }
    coarse_scores.add(fine_scores)
}

/// Gradient of the fused sum flows unchanged to both branches.
pub fn skip_fuse_backward<R: Real>(grad_out: &Tensor<R>) -> (Tensor<R>, Tensor<R>) {
    (grad_out.clone(), grad_out.clone())
}
