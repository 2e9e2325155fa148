//! Max-voted fully convolutional segmentation (MVFCNN) and an object-based CNN
//! baseline for classifying second-phase constituents in micrographs.

pub mod arch;
pub mod cli;
pub mod error;
pub mod imgdata;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod synthgen;
pub mod tensor;

pub use error::{ArchError, CliError, ImageError, MetricsError, NnError, OptimError, PipelineError};
pub use tensor::{Precision, Real, Shape, Tensor};
