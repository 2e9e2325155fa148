//! Layer-list networks with named parameters, skip taps, and explicit backprop.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ArchError, NnError};
use crate::nn::conv::{conv2d_backward_raw, conv2d_forward_raw, ConvGeometry};
use crate::nn::dropout::{dropout_backward, dropout_forward, DropoutState, Mode};
use crate::nn::linear::{fc_backward_batch, fc_forward_batch};
use crate::nn::pool::{maxpool_backward, maxpool_forward, PoolIndex};
use crate::nn::relu::{relu, relu_backward};
use crate::nn::upsample::{bilinear_kernel, upsample_backward, upsample_forward, UpsampleParams};
use crate::params::ParamStore;
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FcnVariant {
    Fcn32s,
    Fcn16s,
    Fcn8s,
}

impl FcnVariant {
    pub const ALL: [FcnVariant; 3] = [FcnVariant::Fcn32s, FcnVariant::Fcn16s, FcnVariant::Fcn8s];

    /// Whether skip A (after the fourth pooling stage) is fused.
    pub fn skip_a(self) -> bool {
        matches!(self, FcnVariant::Fcn16s | FcnVariant::Fcn8s)
    }

    /// Whether skip B (after the third pooling stage) is fused.
    pub fn skip_b(self) -> bool {
        matches!(self, FcnVariant::Fcn8s)
    }

    pub fn name(self) -> &'static str {
        match self {
            FcnVariant::Fcn32s => "fcn32s",
            FcnVariant::Fcn16s => "fcn16s",
            FcnVariant::Fcn8s => "fcn8s",
        }
    }
}

impl std::fmt::Display for FcnVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "variant")]
pub enum ArchKind {
    Cnn,
    Fcn(FcnVariant),
}

/// How freshly created weights are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum WeightInit {
    /// `N(0, 2/fan_in)`.
    He,
    /// `N(0, std^2)`.
    Gaussian { std: f64 },
    /// Every weight and bias zero.
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LayerSpec {
    Conv {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init: WeightInit,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Dropout {
        rate: f64,
    },
    Fc {
        name: String,
        in_dim: usize,
        out_dim: usize,
        init: WeightInit,
    },
    /// Records the current activation under `name` for a later skip fusion.
    Tap {
        name: String,
    },
    Upsample {
        factor: usize,
        channels: usize,
        /// Parameter prefix when the kernel is trainable.
        trainable: Option<String>,
    },
    /// Scores tap `tap` with a 1x1 convolution and adds it to the current scores.
    SkipFuse {
        tap: String,
        name: String,
        in_channels: usize,
        out_channels: usize,
        init: WeightInit,
    },
}

impl LayerSpec {
    /// Parameter names and shapes introduced by this layer.
    pub fn params(&self) -> Vec<(String, Shape)> {
        match self {
            LayerSpec::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                (format!("{name}.weight"), Shape::new(*out_channels, *in_channels, *kernel, *kernel)),
                (format!("{name}.bias"), Shape::new(*out_channels, 1, 1, 1)),
            ],
            LayerSpec::Fc {
                name, in_dim, out_dim, ..
            } => vec![
                (format!("{name}.weight"), Shape::new(*out_dim, *in_dim, 1, 1)),
                (format!("{name}.bias"), Shape::new(*out_dim, 1, 1, 1)),
            ],
            LayerSpec::SkipFuse {
                name,
                in_channels,
                out_channels,
                ..
            } => vec![
                (format!("{name}.weight"), Shape::new(*out_channels, *in_channels, 1, 1)),
                (format!("{name}.bias"), Shape::new(*out_channels, 1, 1, 1)),
            ],
            LayerSpec::Upsample {
                factor,
                channels,
                trainable: Some(name),
            } => vec![(format!("{name}.kernel"), Shape::new(*channels, 1, 2 * factor, 2 * factor))],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub arch: ArchKind,
    pub input_channels: usize,
    /// Fixed square input side for networks with fully-connected layers.
    pub input_size: Option<usize>,
    /// Output class channels.
    pub n_cl: usize,
    /// Product of all pooling and convolution strides.
    pub total_stride: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn param_shapes(&self) -> Vec<(String, Shape)> {
        self.layers.iter().flat_map(LayerSpec::params).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.len()).sum()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Names of the classifier head's parameters (the last parameterized layer on the main path).
    pub fn head_params(&self) -> Vec<String> {
        self.layers
            .iter()
            .rev()
            .find(|l| matches!(l, LayerSpec::Conv { .. } | LayerSpec::Fc { .. }))
            .map(|l| l.params().into_iter().map(|(n, _)| n).collect())
            .unwrap_or_default()
    }

    /// Checks layer compatibility by propagating a probe shape.
    pub fn validate(&self) -> Result<(), ArchError> {
        let side = self.input_size.unwrap_or(self.total_stride.max(1) * 4);
        let mut shape = Shape::new(1, self.input_channels, side, side);
        let mut taps: HashMap<&str, Shape> = HashMap::new();
        let mut heads = 0;
        let mut seen = std::collections::HashSet::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            for (name, _) in layer.params() {
                if !seen.insert(name.clone()) {
                    return Err(ArchError::InvalidSpec(format!("duplicate parameter {name}")));
                }
            }
            let bad = |msg: String| ArchError::InvalidSpec(format!("layer {idx}: {msg}"));
            shape = match layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    if shape.c != *in_channels {
                        return Err(bad(format!("expects {in_channels} channels, gets {}", shape.c)));
                    }
                    let geo = ConvGeometry::new(*stride, *padding);
                    let oh = geo.output_extent(shape.h, *kernel);
                    let ow = geo.output_extent(shape.w, *kernel);
                    match (oh, ow) {
                        (Some(h), Some(w)) => Shape::new(1, *out_channels, h, w),
                        _ => return Err(bad("convolution output empty".into())),
                    }
                }
                LayerSpec::MaxPool { window, stride } => {
                    if *window > shape.h || *window > shape.w || *stride == 0 {
                        return Err(bad("pooling window does not fit".into()));
                    }
                    Shape::new(1, shape.c, (shape.h - window) / stride + 1, (shape.w - window) / stride + 1)
                }
                LayerSpec::Fc { in_dim, out_dim, .. } => {
                    if shape.c * shape.plane() != *in_dim {
                        return Err(bad(format!("expects {in_dim} inputs, gets {}", shape.c * shape.plane())));
                    }
                    Shape::new(1, *out_dim, 1, 1)
                }
                LayerSpec::Tap { name } => {
                    taps.insert(name, shape);
                    shape
                }
                LayerSpec::Upsample { factor, channels, .. } => {
                    if *factor == 0 || *channels != shape.c {
                        return Err(bad("upsampling factor/channels invalid".into()));
                    }
                    Shape::new(1, shape.c, shape.h * factor, shape.w * factor)
                }
                LayerSpec::SkipFuse {
                    tap,
                    in_channels,
                    out_channels,
                    ..
                } => {
                    let t = taps.get(tap.as_str()).ok_or_else(|| bad(format!("unknown tap {tap}")))?;
                    if t.c != *in_channels || *out_channels != shape.c || (t.h, t.w) != (shape.h, shape.w) {
                        return Err(bad(format!("skip {tap} shape {t} incompatible with scores {shape}")));
                    }
                    shape
                }
                LayerSpec::Relu | LayerSpec::Dropout { .. } => shape,
            };
            if matches!(layer, LayerSpec::Conv { .. } | LayerSpec::Fc { .. }) && shape.c == self.n_cl {
                heads = idx;
            }
        }
        if shape.c != self.n_cl {
            return Err(ArchError::InvalidSpec(format!(
                "final output has {} channels, expected {}",
                shape.c, self.n_cl
            )));
        }
        let after_head = &self.layers[heads + 1..];
        if after_head
            .iter()
            .any(|l| matches!(l, LayerSpec::Conv { .. } | LayerSpec::Fc { .. }))
        {
            return Err(ArchError::InvalidSpec("classifier head is not the last parameterized layer".into()));
        }
        Ok(())
    }
}

/// How a forward pass treats dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    Eval,
    /// Dropout active; masks derive from `seed` and the layer index.
    Train { seed: u64 },
}

enum LayerCache<R: Real> {
    None,
    Input(Tensor<R>),
    Pool(PoolIndex),
    Dropout(Option<Vec<R>>),
}

/// Intermediate values of a forward pass needed for backprop.
pub struct Trace<R: Real> {
    caches: Vec<LayerCache<R>>,
    taps: HashMap<String, Tensor<R>>,
    output_shape: Shape,
}

pub struct Gradients<R: Real> {
    pub params: ParamStore<R>,
    pub input: Tensor<R>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<R: Real> {
    pub spec: NetworkSpec,
    pub params: ParamStore<R>,
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    mix_seed(seed, salt)
}

impl<R: Real> Network<R> {
    /// Allocates parameters for `spec` and draws initial values with `seed`.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self, ArchError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for layer in &spec.layers {
            let (init, fan_in) = match layer {
                LayerSpec::Conv {
                    init,
                    in_channels,
                    kernel,
                    ..
                } => (*init, in_channels * kernel * kernel),
                LayerSpec::Fc { init, in_dim, .. } => (*init, *in_dim),
                LayerSpec::SkipFuse { init, in_channels, .. } => (*init, *in_channels),
                LayerSpec::Upsample {
                    factor,
                    channels,
                    trainable: Some(name),
                } => {
                    params.insert(format!("{name}.kernel"), bilinear_kernel(*channels, *factor)?);
                    continue;
                }
                _ => continue,
            };
            let std = match init {
                WeightInit::He => (2.0 / fan_in as f64).sqrt(),
                WeightInit::Gaussian { std } => std,
                WeightInit::Zero => 0.0,
            };
            let shapes = layer.params();
            let (wname, wshape) = &shapes[0];
            let (bname, bshape) = &shapes[1];
            params.insert(wname.clone(), gaussian_tensor(&mut rng, *wshape, std));
            params.insert(bname.clone(), Tensor::zeros(*bshape));
        }
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: NetworkSpec, params: ParamStore<R>) -> Result<Self, ArchError> {
        spec.validate()?;
        for (name, shape) in spec.param_shapes() {
            match params.get(&name) {
                Some(t) if t.shape() == shape => {}
                Some(t) => {
                    return Err(ArchError::InvalidSpec(format!(
                        "parameter {name} has shape {}, spec wants {shape}",
                        t.shape()
                    )))
                }
                None => return Err(ArchError::InvalidSpec(format!("missing parameter {name}"))),
            }
        }
        if params.len() != spec.param_shapes().len() {
            return Err(ArchError::InvalidSpec("parameter store has extra entries".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn convert<S: Real>(&self) -> Network<S> {
        Network {
            spec: self.spec.clone(),
            params: self.params.convert(),
        }
    }

    pub fn n_cl(&self) -> usize {
        self.spec.n_cl
    }

    /// Logits for `input` (no softmax).
    pub fn forward(&self, input: &Tensor<R>, mode: ForwardMode) -> Result<Tensor<R>, NnError> {
        self.run(input, mode, false).map(|(out, _)| out)
    }

    /// Logits plus the trace needed by [`Network::backward`].
    pub fn forward_trace(&self, input: &Tensor<R>, mode: ForwardMode) -> Result<(Tensor<R>, Trace<R>), NnError> {
        self.run(input, mode, true)
    }

    fn run(&self, input: &Tensor<R>, mode: ForwardMode, keep: bool) -> Result<(Tensor<R>, Trace<R>), NnError> {
        if input.shape().c != self.spec.input_channels {
            return Err(NnError::ShapeMismatch {
                what: "network input channels",
                expected: Shape::new(input.shape().n, self.spec.input_channels, input.shape().h, input.shape().w),
                actual: input.shape(),
            });
        }
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut taps: HashMap<String, Tensor<R>> = HashMap::new();
        for (idx, layer) in self.spec.layers.iter().enumerate() {
            let (y, cache) = match layer {
                LayerSpec::Conv {
                    name, stride, padding, ..
                } => {
                    let w = self.params.require(&format!("{name}.weight"))?;
                    let b = self.params.require(&format!("{name}.bias"))?;
                    let y = conv2d_forward_raw(&x, w, b.data(), ConvGeometry::new(*stride, *padding))?;
                    (y, LayerCache::Input(x))
                }
                LayerSpec::Relu => {
                    let y = relu(&x);
                    (y, LayerCache::Input(x))
                }
                LayerSpec::MaxPool { window, stride } => {
                    let (y, index) = maxpool_forward(&x, (*window, *window), *stride)?;
                    (y, LayerCache::Pool(index))
                }
                LayerSpec::Dropout { rate } => {
                    let state = match mode {
                        ForwardMode::Eval => DropoutState {
                            rate: *rate,
                            mode: Mode::Eval,
                            rng_seed: 0,
                        },
                        ForwardMode::Train { seed } => DropoutState {
                            rate: *rate,
                            mode: Mode::Train,
                            rng_seed: mix_seed(seed, idx as u64),
                        },
                    };
                    let out = dropout_forward(&x, &state)?;
                    (out.output, LayerCache::Dropout(out.multiplier))
                }
                LayerSpec::Fc { name, .. } => {
                    let w = self.params.require(&format!("{name}.weight"))?;
                    let b = self.params.require(&format!("{name}.bias"))?;
                    let y = fc_forward_batch(&x, w, b.data())?;
                    (y, LayerCache::Input(x))
                }
                LayerSpec::Tap { name } => {
                    taps.insert(name.clone(), x.clone());
                    (x, LayerCache::None)
                }
                LayerSpec::Upsample {
                    factor,
                    channels,
                    trainable,
                } => {
                    let params = self.upsample_params(*factor, *channels, trainable.as_deref())?;
                    let y = upsample_forward(&x, &params)?;
                    (y, LayerCache::Input(x))
                }
                LayerSpec::SkipFuse { tap, name, .. } => {
                    let t = taps.get(tap).ok_or_else(|| NnError::UnknownParameter(tap.clone()))?;
                    let w = self.params.require(&format!("{name}.weight"))?;
                    let b = self.params.require(&format!("{name}.bias"))?;
                    let score = conv2d_forward_raw(t, w, b.data(), ConvGeometry::new(1, 0))?;
                    let y = crate::nn::fuse::skip_fuse(&x, &score)?;
                    (y, LayerCache::None)
                }
            };
            if keep {
                caches.push(cache);
            }
            x = y;
        }
        if !keep {
            taps.clear();
        }
        let output_shape = x.shape();
        Ok((
            x,
            Trace {
                caches,
                taps,
                output_shape,
            },
        ))
    }

    fn upsample_params(&self, factor: usize, channels: usize, trainable: Option<&str>) -> Result<UpsampleParams<R>, NnError> {
        match trainable {
            Some(name) => Ok(UpsampleParams {
                factor,
                kernel: self.params.require(&format!("{name}.kernel"))?.clone(),
                trainable: true,
            }),
            None => UpsampleParams::bilinear(channels, factor),
        }
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the logits) through `trace`.
    pub fn backward(&self, trace: &Trace<R>, grad_out: &Tensor<R>) -> Result<Gradients<R>, NnError> {
        if grad_out.shape() != trace.output_shape {
            return Err(NnError::ShapeMismatch {
                what: "network upstream gradient",
                expected: trace.output_shape,
                actual: grad_out.shape(),
            });
        }
        if trace.caches.len() != self.spec.layers.len() {
            return Err(NnError::StaleCache(trace.caches.len()));
        }
        let mut grads = self.params.zeros_like();
        let mut tap_grads: HashMap<&str, Tensor<R>> = HashMap::new();
        let mut g = grad_out.clone();
        for (idx, layer) in self.spec.layers.iter().enumerate().rev() {
            let cache = &trace.caches[idx];
            g = match (layer, cache) {
                (
                    LayerSpec::Conv {
                        name, stride, padding, ..
                    },
                    LayerCache::Input(x),
                ) => {
                    let wn = format!("{name}.weight");
                    let bn = format!("{name}.bias");
                    let w = self.params.require(&wn)?;
                    let b = self.params.require(&bn)?;
                    let cg = conv2d_backward_raw(x, w, b.data(), ConvGeometry::new(*stride, *padding), &g)?;
                    grads.accumulate(&wn, &cg.weights)?;
                    grads.accumulate(&bn, &Tensor::from_vec(b.shape(), cg.bias)?)?;
                    cg.input
                }
                (LayerSpec::Relu, LayerCache::Input(x)) => relu_backward(x, &g)?,
                (LayerSpec::MaxPool { .. }, LayerCache::Pool(index)) => maxpool_backward(index, &g)?,
                (LayerSpec::Dropout { .. }, LayerCache::Dropout(m)) => dropout_backward(m.as_deref(), &g)?,
                (LayerSpec::Fc { name, .. }, LayerCache::Input(x)) => {
                    let wn = format!("{name}.weight");
                    let bn = format!("{name}.bias");
                    let w = self.params.require(&wn)?;
                    let fg = fc_backward_batch(x, w, &g)?;
                    grads.accumulate(&wn, &fg.weights)?;
                    grads.accumulate(&bn, &Tensor::from_vec(Shape::new(fg.bias.len(), 1, 1, 1), fg.bias)?)?;
                    fg.input
                }
                (LayerSpec::Tap { name }, LayerCache::None) => {
                    if let Some(tg) = tap_grads.remove(name.as_str()) {
                        g.add_assign(&tg)?;
                    }
                    g
                }
                (
                    LayerSpec::Upsample {
                        factor,
                        channels,
                        trainable,
                    },
                    LayerCache::Input(x),
                ) => {
                    let params = self.upsample_params(*factor, *channels, trainable.as_deref())?;
                    let ug = upsample_backward(x, &params, &g)?;
                    if let Some(name) = trainable {
                        grads.accumulate(&format!("{name}.kernel"), &ug.kernel)?;
                    }
                    ug.input
                }
                (LayerSpec::SkipFuse { tap, name, .. }, LayerCache::None) => {
                    let t = trace
                        .taps
                        .get(tap)
                        .ok_or_else(|| NnError::UnknownParameter(tap.clone()))?;
                    let wn = format!("{name}.weight");
                    let bn = format!("{name}.bias");
                    let w = self.params.require(&wn)?;
                    let b = self.params.require(&bn)?;
                    let (to_coarse, to_fine) = crate::nn::fuse::skip_fuse_backward(&g);
                    let cg = conv2d_backward_raw(t, w, b.data(), ConvGeometry::new(1, 0), &to_fine)?;
                    grads.accumulate(&wn, &cg.weights)?;
                    grads.accumulate(&bn, &Tensor::from_vec(b.shape(), cg.bias)?)?;
                    match tap_grads.get_mut(tap.as_str()) {
                        Some(acc) => acc.add_assign(&cg.input)?,
                        None => {
                            tap_grads.insert(tap.as_str(), cg.input);
                        }
                    }
                    to_coarse
                }
                _ => return Err(NnError::StaleCache(idx)),
            };
        }
        Ok(Gradients { params: grads, input: g })
    }
}

pub(crate) fn gaussian_tensor<R: Real>(rng: &mut ChaCha8Rng, shape: Shape, std: f64) -> Tensor<R> {
    if std == 0.0 {
        return Tensor::zeros(shape);
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_, _, _, _| R::from_f64(normal.sample(rng)))
}
