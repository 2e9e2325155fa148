//! FCN-32s -> FCN-16s -> FCN-8s fine-tuning.

use serde::Serialize;

use super::network::{ArchKind, FcnVariant, LayerSpec, Network, WeightInit};
use crate::error::{ArchError, OptimError};
use crate::optim::{train_with_state, SgdConfig, TrainSample, TrainState};
use crate::tensor::Real;

/// Rejects stage schedules whose learning rates are not strictly decreasing.
pub fn validate_stage_rates(stages: &[SgdConfig]) -> Result<(), ArchError> {
    if stages.is_empty() || stages.len() > 3 {
        return Err(ArchError::InvalidSchedule(format!(
            "expected 1 to 3 stages, got {}",
            stages.len()
        )));
    }
    for (i, s) in stages.iter().enumerate() {
        s.validate().map_err(|e| ArchError::InvalidSchedule(format!("stage {}: {e}", i + 1)))?;
    }
    for pair in stages.windows(2) {
        if pair[1].learning_rate >= pair[0].learning_rate {
            return Err(ArchError::InvalidSchedule(format!(
                "learning rates must strictly decrease, got {} then {}",
                pair[0].learning_rate, pair[1].learning_rate
            )));
        }
    }
    Ok(())
}

fn tap_channels(layers: &[LayerSpec], tap: &str) -> Option<usize> {
    let mut channels = None;
    for layer in layers {
        match layer {
            LayerSpec::Conv { out_channels, .. } => channels = Some(*out_channels),
            LayerSpec::Tap { name } if name == tap => return channels,
            _ => {}
        }
    }
    None
}

/// Builds the next variant from `parent`: its weights are copied and the new
/// skip-score layers start at zero, so the child computes the parent's function.
pub fn promote<R: Real>(parent: &Network<R>, variant: FcnVariant) -> Result<Network<R>, ArchError> {
    let ArchKind::Fcn(from) = parent.spec.arch else {
        return Err(ArchError::InvalidSpec("only FCNs can be promoted".into()));
    };
    let n_cl = parent.spec.n_cl;
    let mut layers = Vec::new();
    let mut upsamples = 0;
    for layer in &parent.spec.layers {
        if matches!(layer, LayerSpec::SkipFuse { .. }) {
            continue;
        }
        layers.push(layer.clone());
        if matches!(layer, LayerSpec::Upsample { .. }) {
            upsamples += 1;
            let tap = match upsamples {
                1 if variant.skip_a() => "pool4",
                2 if variant.skip_b() => "pool3",
                _ => continue,
            };
            let in_channels = tap_channels(&parent.spec.layers, tap)
                .ok_or_else(|| ArchError::InvalidSpec(format!("parent has no tap {tap}")))?;
            layers.push(LayerSpec::SkipFuse {
                tap: tap.into(),
                name: format!("score_{tap}"),
                in_channels,
                out_channels: n_cl,
                init: WeightInit::Zero,
            });
        }
    }
    let mut spec = parent.spec.clone();
    spec.arch = ArchKind::Fcn(variant);
    spec.layers = layers;
    let mut child = Network::<R>::init(spec, 0)?;
    for (name, t) in parent.params.iter() {
        if let Some(slot) = child.params.get_mut(name) {
            if slot.shape() == t.shape() {
                *slot = t.clone();
            }
        }
    }
    log::debug!("promoted {from} to {variant}");
    Ok(child)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub variant: FcnVariant,
    pub learning_rate: f64,
    pub iterations: u64,
    pub final_loss: Option<f64>,
    /// Iteration at which the stage diverged; its network was discarded.
    pub diverged_at: Option<u64>,
}

pub struct StagedOutcome<R: Real> {
    /// Trained network of every completed stage, in order.
    pub networks: Vec<Network<R>>,
    pub states: Vec<TrainState<R>>,
    pub reports: Vec<StageReport>,
}

impl<R: Real> StagedOutcome<R> {
    /// The last stage that completed without diverging.
    pub fn final_network(&self) -> &Network<R> {
        self.networks.last().expect("at least one completed stage")
    }

    pub fn network(&self, variant: FcnVariant) -> Option<&Network<R>> {
        self.networks.iter().find(|n| n.spec.arch == ArchKind::Fcn(variant))
    }
}

/// Trains `initial` (an FCN-32s) with `stages[0]`, then promotes and fine-tunes
/// FCN-16s and FCN-8s with the following stages. If a later stage diverges, the
/// previous stage's network is kept and training stops there.
pub fn staged_train<R: Real>(
    dataset: &[TrainSample<R>],
    stages: &[SgdConfig],
    initial: Network<R>,
    seed: u64,
) -> Result<StagedOutcome<R>, ArchError> {
    validate_stage_rates(stages)?;
    if initial.spec.arch != ArchKind::Fcn(FcnVariant::Fcn32s) {
        return Err(ArchError::InvalidSpec("staged training starts from an FCN-32s".into()));
    }
    let mut outcome = StagedOutcome {
        networks: Vec::new(),
        states: Vec::new(),
        reports: Vec::new(),
    };
    let mut net = initial;
    for (k, (cfg, variant)) in stages.iter().zip(FcnVariant::ALL).enumerate() {
        if k > 0 {
            net = promote(outcome.final_network(), variant)?;
        }
        let mut state = TrainState::new(&net.params);
        let stage_seed = super::network::derive_seed(seed, 1000 + k as u64);
        log::info!(
            "stage {variant}: {} iterations at learning rate {}",
            cfg.max_iterations,
            cfg.learning_rate
        );
        let result = train_with_state(&mut net, dataset, cfg, stage_seed, &mut state);
        let mut report = StageReport {
            variant,
            learning_rate: cfg.learning_rate,
            iterations: state.iteration,
            final_loss: state.loss_history.last().map(|&(_, l)| l),
            diverged_at: None,
        };
        match result {
            Ok(()) => {
                outcome.reports.push(report);
                outcome.networks.push(net.clone());
                outcome.states.push(state);
            }
            Err(OptimError::Diverged { iteration }) => {
                log::warn!("stage {variant} diverged at iteration {iteration}");
                if k == 0 {
                    return Err(ArchError::StageDiverged {
                        stage: variant.to_string(),
                        iteration,
                    });
                }
                report.diverged_at = Some(iteration);
                outcome.reports.push(report);
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_mini_fcn, build_mini_fcn_with, FcnConfig, ForwardMode};
    use crate::nn::testing::random_tensor;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rates(lrs: &[f64], iters: u64) -> Vec<SgdConfig> {
        lrs.iter().map(|&lr| SgdConfig::new(lr, 0.9, 0.0, iters)).collect()
    }

    #[test]
    fn stage_rates_must_strictly_decrease() {
        assert!(validate_stage_rates(&rates(&[0.01, 0.005, 0.0025], 1)).is_ok());
        assert!(validate_stage_rates(&rates(&[0.01, 0.01, 0.001], 1)).is_err());
        assert!(validate_stage_rates(&rates(&[0.01, 0.02], 1)).is_err());
        assert!(validate_stage_rates(&[]).is_err());
        assert!(validate_stage_rates(&SgdConfig::reference_fcn_stages(1)).is_ok());
    }

    fn tiny_dataset(rng: &mut ChaCha8Rng) -> Vec<TrainSample<f64>> {
        (0..2)
            .map(|_| TrainSample {
                input: random_tensor(rng, Shape::new(1, 1, 32, 32)),
                labels: (0..32 * 32).map(|p| (p % 3) as u8).collect(),
            })
            .collect()
    }

    #[test]
    fn zero_iterations_leave_fcn8s_equal_to_initial_fcn32s() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data = tiny_dataset(&mut rng);
        let initial = Network::<f64>::init(build_mini_fcn(FcnVariant::Fcn32s, 3), 2).unwrap();
        let out = staged_train(&data, &rates(&[0.01, 0.005, 0.001], 0), initial.clone(), 1).unwrap();
        assert_eq!(out.networks.len(), 3);
        let x = random_tensor(&mut rng, Shape::new(1, 1, 64, 64));
        let base = initial.forward(&x, ForwardMode::Eval).unwrap();
        assert_eq!(out.final_network().forward(&x, ForwardMode::Eval).unwrap(), base);
        assert_eq!(out.final_network().spec, build_mini_fcn(FcnVariant::Fcn8s, 3));
    }

    #[test]
    fn promotion_matches_direct_build() {
        let cfg = FcnConfig {
            stage_widths: [2, 3, 4, 5, 6],
            head_width: 7,
            dropout: 0.25,
        };
        let parent = Network::<f32>::init(build_mini_fcn_with(FcnVariant::Fcn32s, 4, &cfg), 1).unwrap();
        let child = promote(&parent, FcnVariant::Fcn8s).unwrap();
        assert_eq!(child.spec, build_mini_fcn_with(FcnVariant::Fcn8s, 4, &cfg));
    }

    #[test]
    fn later_stage_divergence_keeps_previous_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let data = tiny_dataset(&mut rng);
        let initial = Network::<f64>::init(build_mini_fcn(FcnVariant::Fcn32s, 3), 2).unwrap();
        let mut stages = rates(&[1e40, 1e39], 0);
        stages[1].max_iterations = 5;
        let out = staged_train(&data, &stages, initial.clone(), 1).unwrap();
        assert_eq!(out.networks.len(), 1);
        assert_eq!(out.final_network(), &initial);
        assert!(out.reports[1].diverged_at.is_some());
    }

    #[test]
    fn first_stage_divergence_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let data = tiny_dataset(&mut rng);
        let initial = Network::<f64>::init(build_mini_fcn(FcnVariant::Fcn32s, 3), 2).unwrap();
        let out = staged_train(&data, &rates(&[1e40], 5), initial, 1);
        assert!(matches!(out, Err(ArchError::StageDiverged { .. })));
    }
}
