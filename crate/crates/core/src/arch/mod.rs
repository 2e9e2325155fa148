//! Miniature classification CNN and FCN builders, staged fine-tuning, checkpoints.

pub mod checkpoint;
pub mod network;
pub mod staged;

use serde::{Deserialize, Serialize};

use crate::error::ArchError;
use crate::tensor::{Real, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, HeadReinit, CHECKPOINT_VERSION};
pub use network::{
    ArchKind, FcnVariant, ForwardMode, Gradients, LayerSpec, Network, NetworkSpec, Trace, WeightInit,
};
pub use staged::{promote, staged_train, validate_stage_rates, StageReport, StagedOutcome};

/// Standard deviation used for freshly initialized classifier heads.
pub const HEAD_INIT_STD: f64 = 0.01;

/// Layer widths of the object-classification CNN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    /// Output channels of the three conv stages (5x5, 5x5, 3x3).
    pub conv_widths: [usize; 3],
    pub hidden: usize,
    pub dropout: f64,
    /// Gaussian std of the first conv layer, or He init when absent.
    #[serde(default)]
    pub first_std: Option<f64>,
    /// Gaussian std of the remaining non-head layers, or He init when absent.
    #[serde(default)]
    pub rest_std: Option<f64>,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            conv_widths: [8, 16, 32],
            hidden: 64,
            dropout: 0.5,
            first_std: None,
            rest_std: None,
        }
    }
}

impl CnnConfig {
    /// Reference topology widths with Gaussian init (std 1e-4 first layer, 0.01 elsewhere).
    pub fn reference() -> Self {
        Self {
            conv_widths: [32, 32, 64],
            hidden: 64,
            dropout: 0.5,
            first_std: Some(1e-4),
            rest_std: Some(0.01),
        }
    }
}

/// Layer widths of the segmentation FCN encoder and head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcnConfig {
    /// Conv widths of the five encoder stages; each stage halves resolution.
    pub stage_widths: [usize; 5],
    /// Width of the two convolutionalized fully-connected layers.
    pub head_width: usize,
    pub dropout: f64,
}

impl Default for FcnConfig {
    fn default() -> Self {
        Self {
            stage_widths: [8, 16, 24, 32, 32],
            head_width: 48,
            dropout: 0.5,
        }
    }
}

impl FcnConfig {
    /// VGG16-sized widths, for documentation; far too slow for desk-scale runs.
    pub fn vgg16() -> Self {
        Self {
            stage_widths: [64, 128, 256, 512, 512],
            head_width: 4096,
            dropout: 0.5,
        }
    }
}

fn init_or_he(std: Option<f64>) -> WeightInit {
    std.map_or(WeightInit::He, |std| WeightInit::Gaussian { std })
}

fn conv(name: &str, cin: usize, cout: usize, kernel: usize, padding: usize, init: WeightInit) -> LayerSpec {
    LayerSpec::Conv {
        name: name.into(),
        in_channels: cin,
        out_channels: cout,
        kernel,
        stride: 1,
        padding,
        init,
    }
}

const POOL: LayerSpec = LayerSpec::MaxPool { window: 2, stride: 2 };

/// Smallest accepted object-CNN input side.
pub const MIN_CNN_INPUT: usize = 16;

pub fn build_mini_cnn(input_size: usize, n_cl: usize) -> Result<NetworkSpec, ArchError> {
    build_mini_cnn_with(input_size, n_cl, &CnnConfig::default())
}

/// Three conv/ReLU/pool stages, a hidden fully-connected layer with dropout, and a classifier.
pub fn build_mini_cnn_with(input_size: usize, n_cl: usize, cfg: &CnnConfig) -> Result<NetworkSpec, ArchError> {
    if input_size < MIN_CNN_INPUT {
        return Err(ArchError::InputTooSmall {
            size: input_size,
            min: MIN_CNN_INPUT,
        });
    }
    if n_cl == 0 {
        return Err(ArchError::InvalidSpec("class count must be positive".into()));
    }
    let [w1, w2, w3] = cfg.conv_widths;
    let side = input_size / 8;
    let rest = init_or_he(cfg.rest_std);
    let layers = vec![
        conv("conv1", 1, w1, 5, 2, init_or_he(cfg.first_std)),
        LayerSpec::Relu,
        POOL,
        conv("conv2", w1, w2, 5, 2, rest),
        LayerSpec::Relu,
        POOL,
        conv("conv3", w2, w3, 3, 1, rest),
        LayerSpec::Relu,
        POOL,
        LayerSpec::Fc {
            name: "fc1".into(),
            in_dim: w3 * side * side,
            out_dim: cfg.hidden,
            init: rest,
        },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: cfg.dropout },
        LayerSpec::Fc {
            name: "fc2".into(),
            in_dim: cfg.hidden,
            out_dim: n_cl,
            init: WeightInit::Gaussian { std: HEAD_INIT_STD },
        },
    ];
    let spec = NetworkSpec {
        arch: ArchKind::Cnn,
        input_channels: 1,
        input_size: Some(input_size),
        n_cl,
        total_stride: 8,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn build_mini_fcn(variant: FcnVariant, n_cl: usize) -> NetworkSpec {
    build_mini_fcn_with(variant, n_cl, &FcnConfig::default())
}

/// Five conv/ReLU/pool encoder stages (total stride 32), two convolutionalized
/// fully-connected layers, a score layer, and an upsampling decoder with
/// optional skip fusions from the fourth and third pooling outputs.
pub fn build_mini_fcn_with(variant: FcnVariant, n_cl: usize, cfg: &FcnConfig) -> NetworkSpec {
    let w = cfg.stage_widths;
    let mut layers = Vec::new();
    let mut cin = 1;
    for (stage, &cout) in w.iter().enumerate() {
        layers.push(conv(&format!("conv{}", stage + 1), cin, cout, 3, 1, WeightInit::He));
        layers.push(LayerSpec::Relu);
        layers.push(POOL);
        match stage {
            2 => layers.push(LayerSpec::Tap { name: "pool3".into() }),
            3 => layers.push(LayerSpec::Tap { name: "pool4".into() }),
            _ => {}
        }
        cin = cout;
    }
    layers.extend([
        conv("fc6", cin, cfg.head_width, 3, 1, WeightInit::He),
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: cfg.dropout },
        conv("fc7", cfg.head_width, cfg.head_width, 1, 0, WeightInit::He),
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: cfg.dropout },
        conv(
            "score_fr",
            cfg.head_width,
            n_cl,
            1,
            0,
            WeightInit::Gaussian { std: HEAD_INIT_STD },
        ),
    ]);
    // The x2, x2, x8 cascade equals one x32 upsample when no skip is fused.
    let up = |factor| LayerSpec::Upsample {
        factor,
        channels: n_cl,
        trainable: None,
    };
    let skip = |tap: &str, name: &str, cin| LayerSpec::SkipFuse {
        tap: tap.into(),
        name: name.into(),
        in_channels: cin,
        out_channels: n_cl,
        init: WeightInit::Zero,
    };
    layers.push(up(2));
    if variant.skip_a() {
        layers.push(skip("pool4", "score_pool4", w[3]));
    }
    layers.push(up(2));
    if variant.skip_b() {
        layers.push(skip("pool3", "score_pool3", w[2]));
    }
    layers.push(up(8));
    NetworkSpec {
        arch: ArchKind::Fcn(variant),
        input_channels: 1,
        input_size: None,
        n_cl,
        total_stride: 32,
        layers,
    }
}

/// Runs an FCN on an input of any size: zero-pads symmetrically up to a multiple
/// of the total stride and crops the scores back.
pub fn forward_any_size<R: Real>(net: &Network<R>, input: &Tensor<R>) -> Result<Tensor<R>, ArchError> {
    let s = input.shape();
    let k = net.spec.total_stride.max(1);
    let ph = s.h.div_ceil(k) * k;
    let pw = s.w.div_ceil(k) * k;
    if (ph, pw) == (s.h, s.w) {
        return Ok(net.forward(input, ForwardMode::Eval)?);
    }
    let top = (ph - s.h) / 2;
    let left = (pw - s.w) / 2;
    let padded = input.pad(top, left, ph, pw)?;
    let out = net.forward(&padded, ForwardMode::Eval)?;
    Ok(out.crop(top, left, s.h, s.w)?)
}
