//! Inverted dropout: survivors are scaled by `1/(1-p)` so evaluation is the identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutState {
    pub rate: f64,
    pub mode: Mode,
    pub rng_seed: u64,
}

/// Output plus the per-element multiplier applied (needed for the backward pass).
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutOutput<R: Real> {
    pub output: Tensor<R>,
    pub multiplier: Option<Vec<R>>,
}

pub fn dropout_forward<R: Real>(input: &Tensor<R>, state: &DropoutState) -> Result<DropoutOutput<R>, NnError> {
    if !(0.0..1.0).contains(&state.rate) {
        return Err(NnError::InvalidDropoutRate(state.rate));
    }
    if state.mode == Mode::Eval || state.rate == 0.0 {
        return Ok(DropoutOutput {
            output: input.clone(),
            multiplier: None,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(state.rng_seed);
    let keep = R::from_f64(1.0 / (1.0 - state.rate));
    let multiplier: Vec<R> = (0..input.len())
        .map(|_| {
            if rng.random::<f64>() < state.rate {
                R::ZERO
            } else {
                keep
            }
        })
        .collect();
    let mut output = input.clone();
    for (o, &m) in output.data_mut().iter_mut().zip(&multiplier) {
        *o *= m;
    }
    Ok(DropoutOutput {
        output,
        multiplier: Some(multiplier),
    })
}

pub fn dropout_backward<R: Real>(multiplier: Option<&[R]>, grad_out: &Tensor<R>) -> Result<Tensor<R>, NnError> {
    let Some(m) = multiplier else {
        return Ok(grad_out.clone());
    };
    if m.len() != grad_out.len() {
        return Err(NnError::LengthMismatch {
            what: "dropout mask",
            expected: m.len(),
            actual: grad_out.len(),
        });
    }
    let mut g = grad_out.clone();
    for (gv, &mv) in g.data_mut().iter_mut().zip(m) {
        *gv *= mv;
    }
    Ok(g)
}
