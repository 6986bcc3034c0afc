//! Two-stage minibatch training: stage 1 at `base_lr * lr_scale`, stage 2
//! restarts from the best stage-1 weights at half that rate.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::crn::{CrnConfig, CrnParams};
use super::optim::{adam_step, AdamConfig, AdamState};
use super::pipeline::sample_loss_and_grad;
use crate::dsp::{FrameSpec, DEFAULT_FRAME_LEN, DEFAULT_HOP};
use crate::error::{Error, Result};
use crate::scenario::{ScenarioSample, Task};

pub const DEFAULT_BASE_LR: f64 = 0.0005;
pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_STAGE1_EPOCHS: usize = 40;
pub const DEFAULT_STAGE2_EPOCHS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Schedule {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub base_lr: f64,
    /// Desk-scale multiplier `r` on both stage rates.
    pub lr_scale: f64,
    pub batch_size: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            stage1_epochs: DEFAULT_STAGE1_EPOCHS,
            stage2_epochs: DEFAULT_STAGE2_EPOCHS,
            base_lr: DEFAULT_BASE_LR,
            lr_scale: 1.0,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

impl Schedule {
    pub fn total_epochs(&self) -> usize {
        self.stage1_epochs + self.stage2_epochs
    }

    /// 1 or 2 for a 1-based epoch index.
    pub fn stage(&self, epoch: usize) -> u8 {
        if epoch <= self.stage1_epochs {
            1
        } else {
            2
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        let lr = self.base_lr * self.lr_scale;
        if self.stage(epoch) == 1 {
            lr
        } else {
            lr / 2.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_epochs() == 0 {
            return Err(Error::InvalidArgument(
                "schedule needs a batch size and at least one epoch".into(),
            ));
        }
        if !(self.base_lr > 0.0 && self.lr_scale > 0.0 && (self.base_lr * self.lr_scale).is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub crn: CrnConfig,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    pub task: Task,
    pub frame_len: usize,
    pub hop: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(crn: CrnConfig, schedule: Schedule, task: Task, seed: u64) -> Self {
        Self {
            crn,
            schedule,
            adam: AdamConfig::default(),
            task,
            frame_len: DEFAULT_FRAME_LEN,
            hop: DEFAULT_HOP,
            seed,
        }
    }

    pub fn frame_spec(&self) -> Result<FrameSpec> {
        FrameSpec::hann(self.frame_len, self.hop)
    }
}

/// Training data, addressed by index so the trainer controls the order.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn task(&self) -> Task;
    fn sample(&self, index: usize) -> Result<ScenarioSample>;
}

/// Samples held in memory.
#[derive(Debug, Clone)]
pub struct InMemorySource {
    pub task: Task,
    pub samples: Vec<ScenarioSample>,
}

impl SampleSource for InMemorySource {
    fn len(&self) -> usize {
        self.samples.len()
    }
    fn task(&self) -> Task {
        self.task
    }
    fn sample(&self, index: usize) -> Result<ScenarioSample> {
        self.samples
            .get(index)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("sample {index} out of range")))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: u8,
    pub lr: f64,
    pub mean_loss: f64,
    /// Mean loss of each minibatch, in update order.
    pub step_losses: Vec<f64>,
}

/// Complete training state after an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: CrnParams,
    pub adam: AdamState,
    pub epoch: usize,
    pub best_stage1_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
    pub dataset_fingerprint: String,
}

impl Checkpoint {
    pub fn stage(&self) -> u8 {
        self.config.schedule.stage(self.epoch)
    }
}

/// Shuffled sample order for a 1-based epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// Trains from scratch. `on_epoch` sees every epoch's checkpoint; an error
/// from it aborts training. A non-finite loss aborts with
/// [`Error::Diverged`] carrying the global update index.
pub fn train(
    config: &TrainConfig,
    s_taps: &[f64],
    data: &dyn SampleSource,
    dataset_fingerprint: &str,
    on_epoch: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    config.schedule.validate()?;
    if data.task() != config.task {
        return Err(Error::TaskMismatch("dataset task differs from the training task"));
    }
    if data.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let frame_spec = config.frame_spec()?;
    if frame_spec.bins() != config.crn.bins {
        return Err(Error::InvalidFrameSpec(
            "frame length does not match the network's bin count",
        ));
    }
    let schedule = &config.schedule;
    let mut params = CrnParams::new(config.crn.clone(), s_taps, config.seed)?;
    let mut adam = AdamState::for_params(&params.trainable_mut());
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, usize, CrnParams)> = None;
    let mut step = 0usize;
    let mut last = None;

    for epoch in 1..=schedule.total_epochs() {
        if epoch == schedule.stage1_epochs + 1 {
            if let Some((_, _, p)) = &best {
                params = p.clone();
            }
            adam = AdamState::for_params(&params.trainable_mut());
        }
        let lr = schedule.lr(epoch);
        let order = epoch_order(data.len(), config.seed, epoch);
        let mut step_losses = Vec::with_capacity(order.len().div_ceil(schedule.batch_size));
        let mut total = 0.0;
        for batch in order.chunks(schedule.batch_size) {
            params.zero_grad();
            let mut batch_loss = 0.0;
            for &i in batch {
                let sample = data.sample(i)?;
                let loss = match sample_loss_and_grad(&mut params, &sample, &frame_spec) {
                    Err(Error::NonFinite(_)) | Err(Error::NonFiniteGradient(_)) => {
                        return Err(Error::Diverged { step })
                    }
                    other => other?,
                };
                batch_loss += loss;
            }
            let inv = 1.0 / batch.len() as f64;
            for t in params.trainable_mut() {
                for g in t.grad_mut() {
                    *g *= inv;
                }
            }
            match adam_step(&mut params.trainable_mut(), &mut adam, lr, &config.adam) {
                Err(Error::NonFiniteUpdate(_)) | Err(Error::NonFiniteGradient(_)) => {
                    return Err(Error::Diverged { step })
                }
                other => other?,
            };
            step += 1;
            total += batch_loss;
            step_losses.push(batch_loss * inv);
        }
        let mean_loss = total / data.len() as f64;
        let stage = schedule.stage(epoch);
        if stage == 1 && best.as_ref().is_none_or(|(l, _, _)| mean_loss < *l) {
            best = Some((mean_loss, epoch, params.clone()));
        }
        history.push(EpochRecord {
            epoch,
            stage,
            lr,
            mean_loss,
            step_losses,
        });
        let ckpt = Checkpoint {
            config: config.clone(),
            params: params.clone(),
            adam: adam.clone(),
            epoch,
            best_stage1_epoch: best.as_ref().map(|b| b.1),
            history: history.clone(),
            dataset_fingerprint: dataset_fingerprint.into(),
        };
        on_epoch(&ckpt)?;
        last = Some(ckpt);
    }
    Ok(last.expect("at least one epoch"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Waveform;
    use crate::room::{PathLabel, Rir};
    use crate::scenario::{generate_source, synthesize_sample, NoiseKind, ReferenceMode};

    fn tiny_source(n: usize) -> InMemorySource {
        let h = Rir::from_taps(alloc::vec![0.0, 0.0, 0.5, 0.2], 16000, PathLabel::Primary).unwrap();
        let samples = (0..n as u64)
            .map(|seed| {
                let src: Waveform = generate_source(NoiseKind::Engine, 0.1, seed, 16000).unwrap();
                synthesize_sample(
                    &src,
                    None,
                    None,
                    &h,
                    Task::PureNoise,
                    seed,
                    "engine",
                    ReferenceMode::Dry,
                )
                .unwrap()
            })
            .collect();
        InMemorySource {
            task: Task::PureNoise,
            samples,
        }
    }

    fn tiny_config(epochs: (usize, usize)) -> TrainConfig {
        TrainConfig::new(
            CrnConfig::reduced(),
            Schedule {
                stage1_epochs: epochs.0,
                stage2_epochs: epochs.1,
                batch_size: 4,
                lr_scale: 2.0,
                ..Schedule::default()
            },
            Task::PureNoise,
            5,
        )
    }

    #[test]
    fn schedule_trace() {
        let s = Schedule {
            stage1_epochs: 3,
            stage2_epochs: 2,
            lr_scale: 4.0,
            ..Schedule::default()
        };
        let lrs: Vec<f64> = (1..=5).map(|e| s.lr(e)).collect();
        assert_eq!(lrs, alloc::vec![0.002, 0.002, 0.002, 0.001, 0.001]);
        assert_eq!(Schedule::default().lr(41), 0.00025);
    }

    #[test]
    fn training_is_deterministic_and_keeps_the_path_frozen() {
        let data = tiny_source(8);
        let cfg = tiny_config((1, 1));
        let s = [0.0, 1.0, 0.25];
        let mut epochs_seen = Vec::new();
        let a = train(&cfg, &s, &data, "fp", &mut |c| {
            epochs_seen.push(c.epoch);
            Ok(())
        })
        .unwrap();
        let b = train(&cfg, &s, &data, "fp", &mut |_| Ok(())).unwrap();
        assert_eq!(epochs_seen, alloc::vec![1, 2]);
        let la = a.history.last().unwrap().mean_loss;
        let lb = b.history.last().unwrap().mean_loss;
        assert_eq!(la.to_bits(), lb.to_bits());
        assert_eq!(a.params.s_taps(), &s);
        assert_eq!(a.history[1].lr, a.history[0].lr / 2.0);
        assert_eq!(a.best_stage1_epoch, Some(1));
    }

    #[test]
    fn task_mismatch_is_rejected() {
        let data = tiny_source(2);
        let mut cfg = tiny_config((1, 0));
        cfg.task = Task::SpeechPreserve;
        let err = train(&cfg, &[1.0], &data, "fp", &mut |_| Ok(())).unwrap_err();
        assert!(matches!(err, Error::TaskMismatch(_)));
    }
}
