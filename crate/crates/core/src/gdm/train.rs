use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{batch_loss, loss_and_gradients, noise_batch, Denoiser, DiffusionSchedule, NoisedBatch, TrainSample};
use crate::error::{Error, Result};
use crate::nn::AdamState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of the dataset held out for validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            batch_size: 128,
            learning_rate: 3e-4,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// Epoch 0 is the model before any update.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub denoiser: Denoiser,
    /// Optimizer state at the end of the last epoch.
    pub optimizer: AdamState,
    pub curve: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub train_size: usize,
    pub val_size: usize,
}

impl TrainOutcome {
    pub fn best_val_loss(&self) -> f64 {
        self.curve[self.best_epoch].val_loss
    }
}

/// Number of training samples after the held-out split.
pub fn split_point(n: usize, validation_fraction: f64) -> usize {
    if n < 2 {
        return n;
    }
    let val = ((n as f64) * validation_fraction).round() as usize;
    n - val.clamp(1, n - 1)
}

fn mean_loss(denoiser: &Denoiser, batches: &[NoisedBatch]) -> f64 {
    let (sum, count) = batches.iter().fold((0.0, 0usize), |(s, c), b| {
        (s + batch_loss(denoiser, b) * b.steps.len() as f64, c + b.steps.len())
    });
    sum / count as f64
}

/// Shuffled-minibatch Adam on the noise-prediction loss.
///
/// The leading `1 - validation_fraction` of `samples` is trained on; the
/// rest is scored every epoch against a noising draw fixed up front, so the
/// validation curve is comparable across epochs. Pass `optimizer` to
/// continue from an earlier run's moments.
pub fn train<R: Rng + ?Sized>(
    denoiser: Denoiser,
    samples: &[TrainSample],
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
    optimizer: Option<AdamState>,
    rng: &mut R,
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(bad) = samples.iter().find(|s| {
        s.condition.len() != denoiser.condition_dim() || s.target.len() != denoiser.condition_dim()
    }) {
        return Err(Error::DimensionMismatch {
            expected: denoiser.condition_dim(),
            actual: bad.target.len().max(bad.condition.len()),
            context: "training sample width",
        });
    }
    let split = split_point(samples.len(), cfg.validation_fraction);
    let train_set: Vec<&TrainSample> = samples[..split].iter().collect();
    let val_set: Vec<&TrainSample> = if split < samples.len() {
        samples[split..].iter().collect()
    } else {
        train_set.clone()
    };
    let batch_size = cfg.batch_size.max(1);

    let val_batches: Vec<NoisedBatch> = val_set
        .chunks(batch_size)
        .map(|c| noise_batch(c, sched, rng))
        .collect();
    let init_train: Vec<NoisedBatch> = train_set
        .chunks(batch_size)
        .map(|c| noise_batch(c, sched, rng))
        .collect();

    let mut model = denoiser;
    let mut adam = optimizer.unwrap_or_else(|| AdamState::new(model.net(), cfg.learning_rate));
    adam.learning_rate = cfg.learning_rate;

    let initial_val = mean_loss(&model, &val_batches);
    let mut curve = vec![EpochLoss {
        epoch: 0,
        train_loss: mean_loss(&model, &init_train),
        val_loss: initial_val,
    }];
    if !initial_val.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch: 0,
            loss: initial_val,
        });
    }
    let mut best = (0usize, initial_val, model.clone());

    let mut order: Vec<&TrainSample> = train_set.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch = noise_batch(chunk, sched, rng);
            let (loss, grads) = loss_and_gradients(&model, &batch);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            sum += loss * chunk.len() as f64;
            adam.step(model.net_mut(), &grads);
        }
        let train_loss = sum / order.len() as f64;
        let val_loss = mean_loss(&model, &val_batches);
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                loss: val_loss,
            });
        }
        curve.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.1 {
            best = (epoch, val_loss, model.clone());
        }
    }

    Ok(TrainOutcome {
        denoiser: best.2,
        optimizer: adam,
        curve,
        best_epoch: best.0,
        train_size: train_set.len(),
        val_size: val_set.len(),
    })
}
