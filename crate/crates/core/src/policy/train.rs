//! Minibatch training with Adam and a plateau learning-rate schedule.

use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::augment::augment_image;
use super::config::ModelConfig;
use super::loss::{policy_loss, Targets};
use super::model::{image_into, Batch, Mode, Policy, IMAGE_LEN};
use crate::error::{Error, Result};
use crate::expert::{DataSplit, Dataset, Sample};
use crate::nn::{PlateauSchedule, Tape, Tensor};
use crate::sim::render::{RASTER_CHANNELS, RASTER_SIZE};
use crate::sim::{derive_seed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub s_lat: f64,
    pub s_lon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub policy: Policy,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Stacks samples into network inputs and targets, optionally augmenting
/// each image.
pub fn make_batch(samples: &[&Sample], mut augment: Option<&mut SimRng>) -> Result<(Batch, Targets)> {
    let n = samples.len();
    let mut images = vec![0.0; n * IMAGE_LEN];
    for (s, img) in samples.iter().zip(images.chunks_exact_mut(IMAGE_LEN)) {
        image_into(&s.obs, img);
        if let Some(rng) = augment.as_deref_mut() {
            augment_image(img, rng);
        }
    }
    let col = |f: &dyn Fn(&Sample) -> f64| Tensor::matrix(n, 1, samples.iter().map(|s| f(s)).collect());
    let batch = Batch {
        images: Tensor::new(vec![n, RASTER_SIZE, RASTER_SIZE, RASTER_CHANNELS], images)?,
        speeds: col(&|s| s.obs.ego_speed)?,
        cmds: samples.iter().map(|s| s.cmds).collect(),
    };
    let targets = Targets {
        steer: col(&|s| s.action.steer)?,
        accel: col(&|s| s.action.accel)?,
        speed: col(&|s| s.obs.ego_speed)?,
    };
    Ok((batch, targets))
}

/// Mean configured loss over `samples` in eval mode, weighted by batch size.
pub fn evaluate_loss(policy: &Policy, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = SimRng::seed_from_u64(0);
    let mut total = 0.0;
    for chunk in samples.chunks(policy.config.batch_size) {
        let (batch, targets) = make_batch(chunk, None)?;
        let mut tape = Tape::new();
        let f = policy.forward(&mut tape, &batch, Mode::Eval, &mut rng)?;
        let l = policy_loss(&mut tape, policy, &f, &targets)?;
        total += tape.value(l).item() * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Loss of the all-zero network on `samples`.
pub fn zero_baseline_loss(config: &ModelConfig, samples: &[&Sample]) -> Result<f64> {
    evaluate_loss(&Policy::zeros(config.clone())?, samples)
}

/// `n` evenly spaced items (all of them when `cap` is unset or large).
fn spaced<'a>(items: &[&'a Sample], cap: Option<usize>) -> Vec<&'a Sample> {
    match cap {
        Some(c) if c < items.len() => (0..c).map(|i| items[i * items.len() / c]).collect(),
        _ => items.to_vec(),
    }
}

/// Trains on the dataset's train split, selecting on its val split.
pub fn train(dataset: &Dataset, config: &ModelConfig, seed: u64) -> Result<TrainOutcome> {
    let train: Vec<&Sample> = dataset.frames(DataSplit::Train).collect();
    let val: Vec<&Sample> = dataset.frames(DataSplit::Val).collect();
    train_on(&train, &val, config, seed)
}

pub fn train_on(train: &[&Sample], val: &[&Sample], config: &ModelConfig, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if val.is_empty() {
        return Err(Error::Config("no validation frames".into()));
    }
    let val = spaced(val, config.val_samples);
    let mut policy = Policy::new(config.clone(), derive_seed(seed, &[0x1417]))?;
    let mut order_rng = SimRng::seed_from_u64(derive_seed(seed, &[0x0bde]));
    let mut aug_rng = SimRng::seed_from_u64(derive_seed(seed, &[0xa06]));
    let mut drop_rng = SimRng::seed_from_u64(derive_seed(seed, &[0xd40]));

    let mut order: Vec<usize> = (0..train.len()).collect();
    let per_epoch = config.samples_per_epoch.unwrap_or(train.len()).min(train.len());
    let mut lr = config.initial_lr;
    let mut sched = PlateauSchedule::new();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Policy)> = None;

    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        for idx in order[..per_epoch].chunks(config.batch_size) {
            let chunk: Vec<&Sample> = idx.iter().map(|&i| train[i]).collect();
            let (batch, targets) = make_batch(&chunk, config.augmentation.then_some(&mut aug_rng))?;
            let mut tape = Tape::new();
            let f = policy.forward(&mut tape, &batch, Mode::Train, &mut drop_rng)?;
            let l = policy_loss(&mut tape, &policy, &f, &targets)?;
            sum += tape.value(l).item() * chunk.len() as f64;
            let grads = tape.backward(l, &policy.params)?;
            policy.params.adam_step(&grads, lr)?;
        }
        let train_loss = sum / per_epoch as f64;
        let val_loss = evaluate_loss(&policy, &val)?;
        let (s_lat, s_lon) = policy.s_values();
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            s_lat,
            s_lon,
        });
        info!(
            "{} epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.1e} s=({s_lat:.3}, {s_lon:.3}) {:.1}s",
            config.name,
            started.elapsed().as_secs_f64()
        );
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, policy.clone()));
        }
        lr = sched.observe(val_loss, lr);
        if sched.cuts() >= config.max_lr_cuts {
            break;
        }
    }
    let (_, best_epoch, policy) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        policy,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::{CommandPair, LatCmd, LonCmd};
    use crate::expert::SampleMeta;
    use crate::sim::render::{Observation, RASTER_LEN};
    use crate::sim::world::Action;
    use crate::sim::Weather;

    fn sample(i: usize) -> Sample {
        let lat = LatCmd::ALL[i % 4];
        let lon = LonCmd::ALL[i % 3];
        let steer = [0.0, 0.0, -0.4, 0.4][i % 4];
        let accel = [-0.8, 0.1, 0.6][i % 3];
        Sample {
            obs: Observation {
                raster: (0..RASTER_LEN).map(|k| (((k + i) % 11) * 20) as u8).collect(),
                ego_speed: (i % 5) as f64,
            },
            action: Action::new(steer, accel),
            executed: Action::new(steer, accel),
            cmds: CommandPair::new(lat, lon),
            meta: SampleMeta {
                scene_id: 0,
                route_id: 0,
                weather: Weather::ClearNoon,
                tick: i as u32,
                seed: 0,
            },
        }
    }

    fn tiny(cfg: ModelConfig) -> ModelConfig {
        ModelConfig {
            batch_size: 12,
            max_epochs: 3,
            channels: [2, 2, 2],
            initial_lr: 1e-3,
            ..cfg
        }
    }

    #[test]
    fn empty_training_set_errors() {
        let v = [sample(0)];
        let val: Vec<&Sample> = v.iter().collect();
        assert!(matches!(train_on(&[], &val, &ModelConfig::default(), 0), Err(Error::EmptyDataset)));
    }

    #[test]
    fn learns_below_baseline_and_is_deterministic() {
        let data: Vec<Sample> = (0..48).map(sample).collect();
        let refs: Vec<&Sample> = data.iter().collect();
        let cfg = tiny(ModelConfig::mt_hloss());
        let a = train_on(&refs, &refs, &cfg, 7).unwrap();
        let b = train_on(&refs, &refs, &cfg, 7).unwrap();
        assert_eq!(a.policy.params, b.policy.params);
        assert_eq!(a.history, b.history);
        let base = zero_baseline_loss(&cfg, &refs).unwrap();
        let best = a.history[a.best_epoch].val_loss;
        assert!(best < base, "{best} vs baseline {base}");
    }

    #[test]
    fn batches_carry_targets_and_speed() {
        let data: Vec<Sample> = (0..3).map(sample).collect();
        let refs: Vec<&Sample> = data.iter().collect();
        let (b, t) = make_batch(&refs, None).unwrap();
        assert_eq!(b.images.shape(), &[3, 48, 48, 5]);
        assert_eq!(b.speeds.data(), &[0.0, 1.0, 2.0]);
        assert_eq!(t.steer.data(), &[0.0, 0.0, -0.4]);
        assert_eq!(t.accel.data(), &[-0.8, 0.1, 0.6]);
    }
}
