//! Stochastic gradient descent with momentum and coupled weight decay.
//!
//! `v <- mu*v - eta*(g + lambda*w)`, `w <- w + v`. With `mu = lambda = 0` this is
//! the plain step `w_new = w_old - eta*g`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::network::derive_seed;
use crate::arch::{ForwardMode, Network};
use crate::error::OptimError;
use crate::nn::loss::{softmax_cross_entropy, Reduction};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_iterations: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub reduction: Reduction,
}

fn default_batch_size() -> usize {
    1
}

impl SgdConfig {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64, max_iterations: u64) -> Self {
        Self {
            learning_rate,
            momentum,
            weight_decay,
            max_iterations,
            batch_size: 1,
            reduction: Reduction::Mean,
        }
    }

    /// Reference object-CNN settings: fixed rate 0.001, momentum 0.9, decay 0.004.
    pub fn reference_object_cnn(max_iterations: u64) -> Self {
        Self::new(0.001, 0.9, 0.004, max_iterations)
    }

    /// Reference staged FCN rates: 1e-10, 1e-11 and 3e-12 for
    /// FCN-32s/16s/8s with momentum 0.9 and decay 5e-4, on a summed loss.
    pub fn reference_fcn_stages(max_iterations: u64) -> [Self; 3] {
        [1e-10, 1e-11, 3e-12].map(|lr| Self {
            reduction: Reduction::Sum,
            ..Self::new(lr, 0.9, 5e-4, max_iterations)
        })
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(OptimError::InvalidConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(OptimError::InvalidConfig(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(OptimError::InvalidConfig(format!(
                "weight decay {} must be non-negative",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(OptimError::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<R: Real> {
    pub iteration: u64,
    /// One buffer per parameter, same names and shapes.
    pub velocity: ParamStore<R>,
    pub loss_history: Vec<(u64, f64)>,
}

impl<R: Real> TrainState<R> {
    pub fn new(params: &ParamStore<R>) -> Self {
        Self {
            iteration: 0,
            velocity: params.zeros_like(),
            loss_history: Vec::new(),
        }
    }
}

/// Applies one update. Non-finite gradients refuse the step and leave everything unchanged.
pub fn sgd_step<R: Real>(
    params: &mut ParamStore<R>,
    grads: &ParamStore<R>,
    state: &mut TrainState<R>,
    config: &SgdConfig,
) -> Result<(), OptimError> {
    for (name, w) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| OptimError::MissingGradient(name.to_string()))?;
        if g.shape() != w.shape() {
            return Err(OptimError::GradientShape {
                name: name.to_string(),
                expected: w.shape(),
                actual: g.shape(),
            });
        }
        if !g.all_finite() {
            return Err(OptimError::NonFiniteGradient(name.to_string()));
        }
    }
    let eta = R::from_f64(config.learning_rate);
    let mu = R::from_f64(config.momentum);
    let lambda = R::from_f64(config.weight_decay);
    for (name, w) in params.iter_mut() {
        let g = grads.get(name).expect("checked above");
        if !state.velocity.contains(name) {
            state.velocity.insert(name, crate::tensor::Tensor::zeros(w.shape()));
        }
        let v = state.velocity.get_mut(name).expect("inserted above");
        for ((wv, vv), &gv) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = mu * *vv - eta * (gv + lambda * *wv);
            *wv += *vv;
        }
    }
    state.iteration += 1;
    Ok(())
}

/// One training example: input `(1, C, H, W)` and one label per output position.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample<R: Real> {
    pub input: Tensor<R>,
    pub labels: Vec<u8>,
}

/// Trains `net` in place from a fresh [`TrainState`] and returns the loss history.
pub fn train_epochs<R: Real>(
    net: &mut Network<R>,
    dataset: &[TrainSample<R>],
    config: &SgdConfig,
    seed: u64,
) -> Result<Vec<(u64, f64)>, OptimError> {
    let mut state = TrainState::new(&net.params);
    train_with_state(net, dataset, config, seed, &mut state)?;
    Ok(state.loss_history)
}

/// Runs `config.max_iterations` minibatch steps, visiting samples in a seeded
/// shuffle per epoch. On a non-finite loss or gradient the loop stops with
/// `net` and `state` left at the last good step.
pub fn train_with_state<R: Real>(
    net: &mut Network<R>,
    dataset: &[TrainSample<R>],
    config: &SgdConfig,
    seed: u64,
    state: &mut TrainState<R>,
) -> Result<(), OptimError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(OptimError::EmptyDataset);
    }
    let batch = config.batch_size.min(dataset.len());
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    for _ in 0..config.max_iterations {
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if cursor == order.len() {
                order = (0..dataset.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch)));
                epoch += 1;
                cursor = 0;
            }
            picked.push(order[cursor]);
            cursor += 1;
        }
        let inputs: Vec<Tensor<R>> = picked.iter().map(|&i| dataset[i].input.clone()).collect();
        let input = Tensor::stack(&inputs)?;
        let labels: Vec<u8> = picked.iter().flat_map(|&i| dataset[i].labels.iter().copied()).collect();
        let iteration = state.iteration + 1;
        let mode = ForwardMode::Train {
            seed: derive_seed(seed ^ 0x5EED_D80F, iteration),
        };
        let (logits, trace) = net.forward_trace(&input, mode)?;
        let ce = softmax_cross_entropy(&logits, &labels, config.reduction)?;
        if !ce.loss.is_finite() {
            return Err(OptimError::Diverged { iteration });
        }
        let grads = net.backward(&trace, &ce.grad_logits)?;
        let last_good = (net.params.clone(), state.velocity.clone());
        match sgd_step(&mut net.params, &grads.params, state, config) {
            Ok(()) => {}
            Err(OptimError::NonFiniteGradient(name)) => {
                log::warn!("non-finite gradient in {name} at iteration {iteration}");
                return Err(OptimError::Diverged { iteration });
            }
            Err(e) => return Err(e),
        }
        if !net.params.iter().all(|(_, t)| t.all_finite()) {
            (net.params, state.velocity) = last_good;
            state.iteration -= 1;
            return Err(OptimError::Diverged { iteration });
        }
        state.loss_history.push((state.iteration, ce.loss));
        if state.iteration.is_multiple_of(100) {
            log::debug!("iteration {} loss {:.5}", state.iteration, ce.loss);
        }
    }
    Ok(())
}

/// Mean eval-mode loss over `dataset`.
pub fn dataset_loss<R: Real>(net: &Network<R>, dataset: &[TrainSample<R>], reduction: Reduction) -> Result<f64, OptimError> {
    if dataset.is_empty() {
        return Err(OptimError::EmptyDataset);
    }
    let mut total = 0.0;
    for s in dataset {
        let logits = net.forward(&s.input, ForwardMode::Eval)?;
        total += softmax_cross_entropy(&logits, &s.labels, reduction)?.loss;
    }
    Ok(total / dataset.len() as f64)
}

/// Writes `iteration,loss` rows.
pub fn write_loss_csv(history: &[(u64, f64)], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "iteration,loss")?;
    for (it, loss) in history {
        writeln!(out, "{it},{loss}")?;
    }
    Ok(())
}
