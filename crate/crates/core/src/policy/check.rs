//! Finite-difference check of the full policy loss.

use rand::{Rng, SeedableRng};

use super::config::{ControlMode, EncoderKind, LossMode, ModelConfig};
use super::loss::{policy_loss, Targets};
use super::model::{Batch, Mode, Policy, IMAGE_LEN};
use crate::decision::{CommandPair, LatCmd, LonCmd};
use crate::error::Result;
use crate::nn::{grad_check_with, Coverage, GradCheckReport, Gradients, ParamStore, Tape, Tensor};
use crate::sim::render::{RASTER_CHANNELS, RASTER_SIZE};
use crate::sim::{derive_seed, SimRng};

pub const GRADCHECK_STEP: f64 = 1e-4;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
pub const GRADCHECK_BATCH: usize = 4;

/// Multi-task heads, uncertainty loss and the speed head, so every
/// parameter group is on the tape.
pub fn full_model(encoder: EncoderKind) -> ModelConfig {
    ModelConfig {
        name: format!("gradcheck-{encoder:?}").to_lowercase(),
        encoder,
        control_mode: ControlMode::MultiTask,
        loss_mode: LossMode::Uncertainty,
        speed_branch: true,
        ..ModelConfig::default()
    }
}

/// Four samples whose commands together select every lateral and every
/// longitudinal head.
pub fn probe_batch(seed: u64) -> (Batch, Targets) {
    let mut rng = SimRng::seed_from_u64(seed);
    let cmds = vec![
        CommandPair::new(LatCmd::FollowLane, LonCmd::Decelerate),
        CommandPair::new(LatCmd::GoStraight, LonCmd::Maintain),
        CommandPair::new(LatCmd::TurnLeft, LonCmd::Accelerate),
        CommandPair::new(LatCmd::TurnRight, LonCmd::Maintain),
    ];
    let n = cmds.len();
    let images: Vec<f64> = (0..n * IMAGE_LEN).map(|_| rng.random::<f64>()).collect();
    let mut col = |lo: f64, hi: f64| Tensor::matrix(n, 1, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("column");
    let speeds = col(0.0, 6.0);
    let batch = Batch {
        images: Tensor::new(vec![n, RASTER_SIZE, RASTER_SIZE, RASTER_CHANNELS], images).expect("image batch"),
        speeds: speeds.clone(),
        cmds,
    };
    let targets = Targets {
        steer: col(-1.0, 1.0),
        accel: col(-1.0, 1.0),
        speed: col(0.0, 6.0),
    };
    (batch, targets)
}

/// Randomizes every parameter, biases and log variances included, so no
/// gradient is trivially zero.
pub fn randomized(config: ModelConfig, seed: u64) -> Result<Policy> {
    let mut policy = Policy::new(config, derive_seed(seed, &[1]))?;
    let mut rng = SimRng::seed_from_u64(derive_seed(seed, &[2]));
    let names: Vec<String> = policy.params.names().map(str::to_string).collect();
    for name in names {
        let t = policy.params.get_mut(&name)?;
        if name.ends_with(".b") || name.starts_with("s_") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        } else if name.ends_with(".out.w") {
            t.data_mut().iter_mut().for_each(|v| *v *= 10.0);
        }
    }
    Ok(policy)
}

fn loss_on(policy: &Policy, params: &ParamStore, batch: &Batch, targets: &Targets, mut tape: Tape) -> Result<(f64, Gradients, Tape)> {
    let p = Policy {
        config: policy.config.clone(),
        params: params.clone(),
    };
    let mut rng = SimRng::seed_from_u64(7);
    let fwd = p.forward(&mut tape, batch, Mode::Train, &mut rng)?;
    let l = policy_loss(&mut tape, &p, &fwd, targets)?;
    let v = tape.value(l).item();
    let g = tape.backward(l, &p.params)?;
    Ok((v, g, tape))
}

/// Runs the checker on the configured loss with a fixed dropout mask and
/// with ReLU/abs slopes pinned to those at `policy.params`, so that the
/// difference stencils never straddle a kink.
pub fn check_policy(policy: &Policy, batch: &Batch, targets: &Targets, coverage: Coverage) -> Result<GradCheckReport> {
    let (_, _, mut reference) = loss_on(policy, &policy.params, batch, targets, Tape::recording_kinks())?;
    let pattern = reference.take_kink_pattern();
    let f = |params: &ParamStore| {
        let (v, g, _) = loss_on(policy, params, batch, targets, Tape::pinned_kinks(pattern.clone()))?;
        Ok((v, g))
    };
    grad_check_with(&policy.params, GRADCHECK_STEP, coverage, f)
}

/// Checks the full model under both encoders and returns the worse report.
pub fn check_full_model(seed: u64, coverage: Coverage) -> Result<GradCheckReport> {
    let (batch, targets) = probe_batch(seed);
    let mut worst: Option<GradCheckReport> = None;
    for enc in [EncoderKind::Small, EncoderKind::Deep] {
        let policy = randomized(full_model(enc), seed)?;
        let r = check_policy(&policy, &batch, &targets, coverage)?;
        log::info!("{enc:?}: max rel error {:.3e} over {} coordinates at {:?}", r.max_rel_error, r.checked, r.worst);
        worst = Some(match worst {
            None => r,
            Some(w) => {
                let (checked, refined, unconverged) =
                    (w.checked + r.checked, w.refined + r.refined, w.unconverged + r.unconverged);
                let top = if w.max_rel_error >= r.max_rel_error { w } else { r };
                GradCheckReport {
                    checked,
                    refined,
                    unconverged,
                    ..top
                }
            }
        });
    }
    Ok(worst.expect("two encoders checked"))
}
