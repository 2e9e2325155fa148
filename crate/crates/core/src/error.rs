use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

/// Errors raised by tensor operations and layer kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: Shape,
        actual: Shape,
    },
    #[error("convolution output would be empty for input {input} with kernel {kernel_h}x{kernel_w}, stride {stride}, padding {padding}")]
    EmptyConvOutput {
        input: Shape,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    #[error("pooling window {window_h}x{window_w} does not fit input {input}")]
    WindowTooLarge {
        input: Shape,
        window_h: usize,
        window_w: usize,
    },
    #[error("length mismatch in {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("dropout rate {0} must lie in [0, 1)")]
    InvalidDropoutRate(f64),
    #[error("upsampling factor must be at least 1")]
    InvalidUpsampleFactor,
    #[error("stride must be at least 1")]
    InvalidStride,
    #[error("label {label} at position {position} is outside 0..{classes}")]
    LabelOutOfRange {
        label: usize,
        position: usize,
        classes: usize,
    },
    #[error("no labeled positions to average the loss over")]
    NoLabeledPositions,
    #[error("cannot stack an empty batch")]
    EmptyBatch,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("layer cache does not match layer {0}")]
    StaleCache(usize),
}

/// Errors raised while building networks or reading/writing checkpoints.
#[derive(Debug, Error)]
pub enum ArchError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("input size {size} px is too small; need at least {min} px")]
    InputTooSmall { size: usize, min: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid stage schedule: {0}")]
    InvalidSchedule(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint spec digest {found} does not match expected {expected}; pass head reinitialization to fine-tune")]
    DigestMismatch { expected: String, found: String },
    #[error("training diverged in stage {stage} at iteration {iteration}")]
    StageDiverged { stage: String, iteration: u64 },
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Errors raised by the optimizer and training loop.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in parameter `{0}`; step refused")]
    NonFiniteGradient(String),
    #[error("gradient for `{name}` has shape {actual}, parameter has {expected}")]
    GradientShape {
        name: String,
        expected: Shape,
        actual: Shape,
    },
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss became non-finite at iteration {iteration}")]
    Diverged { iteration: u64 },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Errors raised by raster I/O and image preprocessing.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("raster dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("patch {patch_h}x{patch_w} larger than image {h}x{w}")]
    PatchTooLarge {
        patch_h: usize,
        patch_w: usize,
        h: usize,
        w: usize,
    },
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("target dimensions must be non-zero")]
    ZeroTarget,
    #[error("cannot warp an empty patch")]
    EmptyPatch,
    #[error("rotation augmentation requires square patches, got {0}x{1}")]
    NonSquare(usize, usize),
    #[error("region lies outside the {0}x{1} raster")]
    RegionOutOfBounds(usize, usize),
    #[error("target of {target} patches unachievable; per-class maxima at stride 1: {maxima:?}")]
    UnachievableTarget { target: usize, maxima: Vec<usize> },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

/// Errors raised by the segmentation and classification pipelines.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("region {0} is empty")]
    EmptyRegion(usize),
    #[error("region {id} lies outside the {h}x{w} segmentation")]
    RegionOutOfBounds { id: usize, h: usize, w: usize },
    #[error("patch {patch} px is not divisible by the network stride {stride}")]
    PatchNotAligned { patch: usize, stride: usize },
    #[error("stride {stride} must lie in 1..={patch}")]
    InvalidStride { stride: usize, patch: usize },
    #[error("network input size {net} differs from requested {requested}")]
    InputSizeMismatch { net: usize, requested: usize },
    #[error("segmentation is {0}x{1} but the raster is {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// Errors raised by metric computation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("label maps differ in size: {0} vs {1} pixels")]
    DimensionMismatch(usize, usize),
    #[error("confusion matrix has no counts")]
    Empty,
    #[error("class {class} outside 0..{classes}")]
    ClassOutOfRange { class: usize, classes: usize },
}

/// Errors raised by the command-line workflow.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing required option --{0}")]
    Missing(&'static str),
}
