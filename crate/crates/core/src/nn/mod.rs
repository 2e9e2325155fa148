//! Layer kernels with explicit forward and backward passes.

pub mod conv;
pub mod dropout;
pub mod fuse;
pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod pool;
pub mod relu;
pub mod upsample;

#[cfg(test)]
pub(crate) mod testing;

pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry, ConvGrads, ConvParams};
pub use dropout::{dropout_backward, dropout_forward, DropoutOutput, DropoutState, Mode};
pub use fuse::{skip_fuse, skip_fuse_backward};
pub use linear::{fc_forward, FcParams};
pub use loss::{cross_entropy_loss, softmax, softmax_channels, softmax_cross_entropy, CrossEntropy, Reduction};
pub use pool::{maxpool_backward, maxpool_forward, PoolIndex};
pub use relu::{relu, relu_backward};
pub use upsample::{bilinear_kernel, upsample_backward, upsample_forward, UpsampleGrads, UpsampleParams};
