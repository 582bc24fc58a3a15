//! Conditional diffusion model over normalized power allocations.
//!
//! Expert allocations are mapped to `[-1, 1]^M` via `x0 = 2 p / P - 1`,
//! noised with the closed-form forward process
//! `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`, and a network conditioned
//! on the channel gains learns to predict `eps`. Decisions are drawn with
//! ancestral sampling from `x_T ~ N(0, I)` and mapped back onto the feasible
//! set by [`project_feasible`].

mod denoiser;
mod schedule;
mod train;

pub use denoiser::{time_embedding, Denoiser, EpsilonModel};
pub use schedule::{make_schedule, DiffusionSchedule};
pub use train::{train, EpochLoss, TrainConfig, TrainOutcome};

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::{uniform_allocation, ChannelConfig, ChannelState, PowerAllocation};
use crate::error::{Error, Result};
use crate::nn::Gradients;

/// One expert-labelled training example in model coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub condition: Vec<f64>,
    /// `2 p / P - 1`, componentwise in `[-1, 1]`.
    pub target: Vec<f64>,
}

impl TrainSample {
    pub fn from_expert(state: &ChannelState, expert: &PowerAllocation, cfg: &ChannelConfig) -> Self {
        TrainSample {
            condition: state.gains().to_vec(),
            target: normalize_powers(expert.powers(), cfg.power_budget),
        }
    }
}

pub fn normalize_powers(powers: &[f64], power_budget: f64) -> Vec<f64> {
    powers.iter().map(|p| 2.0 * p / power_budget - 1.0).collect()
}

/// `sqrt(abar) x0 + sqrt(1 - abar) eps` for an explicit `abar`.
pub fn noise_with_alpha_bar(x0: &[f64], alpha_bar: f64, eps: &[f64]) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// Samples `x_t` given `x0` and the noise `eps`.
pub fn forward_noise(
    x0: &[f64],
    t: usize,
    eps: &[f64],
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    if x0.len() != eps.len() {
        return Err(Error::DimensionMismatch {
            expected: x0.len(),
            actual: eps.len(),
            context: "noise vector",
        });
    }
    Ok(noise_with_alpha_bar(x0, sched.alpha_bar(t), eps))
}

/// A minibatch after the forward process: inputs and regression targets.
#[derive(Debug, Clone)]
pub struct NoisedBatch {
    pub x0: Array2<f64>,
    pub conditions: Array2<f64>,
    pub x_t: Array2<f64>,
    pub eps: Array2<f64>,
    pub steps: Vec<usize>,
}

/// Draws `t ~ U{1..T}` then `eps ~ N(0, I)` for each sample, in that order.
pub fn noise_batch<R: Rng + ?Sized>(
    batch: &[&TrainSample],
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> NoisedBatch {
    let n = batch.len();
    let m = batch.first().map_or(0, |s| s.target.len());
    let mut x0 = Array2::zeros((n, m));
    let mut conditions = Array2::zeros((n, m));
    let mut x_t = Array2::zeros((n, m));
    let mut eps = Array2::zeros((n, m));
    let mut steps = Vec::with_capacity(n);
    for (i, sample) in batch.iter().enumerate() {
        let t = rng.random_range(1..=sched.num_steps());
        let (a, b) = (sched.alpha_bar(t).sqrt(), (1.0 - sched.alpha_bar(t)).sqrt());
        for j in 0..m {
            let e: f64 = rng.sample(StandardNormal);
            eps[[i, j]] = e;
            x0[[i, j]] = sample.target[j];
            conditions[[i, j]] = sample.condition[j];
            x_t[[i, j]] = a * sample.target[j] + b * e;
        }
        steps.push(t);
    }
    NoisedBatch {
        x0,
        conditions,
        x_t,
        eps,
        steps,
    }
}

/// Mean squared error of the model's noise prediction on an already
/// noised batch.
pub fn batch_loss<M: EpsilonModel + ?Sized>(model: &M, batch: &NoisedBatch) -> f64 {
    let pred = model.predict_eps(batch.x_t.view(), batch.conditions.view(), &batch.steps);
    let diff = pred - &batch.eps;
    diff.mapv(|d| d * d).mean().unwrap_or(0.0)
}

/// Loss only, for arbitrary noise predictors.
pub fn noise_prediction_loss<M: EpsilonModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    batch: &[&TrainSample],
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> f64 {
    batch_loss(model, &noise_batch(batch, sched, rng))
}

pub(crate) fn loss_and_gradients(denoiser: &Denoiser, batch: &NoisedBatch) -> (f64, Gradients) {
    let input = denoiser.build_input(batch.x_t.view(), batch.conditions.view(), &batch.steps);
    let cache = denoiser
        .net()
        .forward_cached(input.view())
        .expect("input width fixed at construction");
    let diff = cache.output() - &batch.eps;
    let count = diff.len() as f64;
    let loss = diff.mapv(|d| d * d).sum() / count;
    let upstream = diff * (2.0 / count);
    let (grads, _) = denoiser
        .net()
        .backward_batch(&cache, upstream.view())
        .expect("upstream shaped like output");
    (loss, grads)
}

/// Noise-prediction MSE on a freshly noised batch and its parameter gradients.
pub fn training_loss<R: Rng + ?Sized>(
    denoiser: &Denoiser,
    batch: &[&TrainSample],
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(loss_and_gradients(denoiser, &noise_batch(batch, sched, rng)))
}

/// Reverse iteration from a given `x_T`. With `deterministic_last` the
/// final step (t = 1) adds no noise.
pub fn denoise_from<M: EpsilonModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    conditions: ArrayView2<f64>,
    x_start: Array2<f64>,
    sched: &DiffusionSchedule,
    deterministic_last: bool,
    rng: &mut R,
) -> Array2<f64> {
    let n = x_start.nrows();
    let mut x = x_start;
    for t in (1..=sched.num_steps()).rev() {
        let steps = vec![t; n];
        let eps_hat = model.predict_eps(x.view(), conditions, &steps);
        let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
        let scale = 1.0 / sched.alpha(t).sqrt();
        x.zip_mut_with(&eps_hat, |xi, &e| *xi = scale * (*xi - coef * e));
        if t > 1 || !deterministic_last {
            let sigma = sched.beta(t).sqrt();
            x.mapv_inplace(|xi| xi + sigma * rng.sample::<f64, _>(StandardNormal));
        }
    }
    x
}

/// Ancestral sampling for a batch of conditions (one row each).
pub fn sample_batch<M: EpsilonModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    conditions: ArrayView2<f64>,
    sched: &DiffusionSchedule,
    deterministic_last: bool,
    rng: &mut R,
) -> Array2<f64> {
    let x_start = Array2::from_shape_fn((conditions.nrows(), model.action_dim()), |_| {
        rng.sample(StandardNormal)
    });
    denoise_from(model, conditions, x_start, sched, deterministic_last, rng)
}

/// Draws one raw action (normalized coordinates) for a single condition.
pub fn sample<M: EpsilonModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    condition: &ChannelState,
    sched: &DiffusionSchedule,
    deterministic_last: bool,
    rng: &mut R,
) -> Vec<f64> {
    let cond = ArrayView2::from_shape((1, condition.len()), condition.gains()).expect("row");
    let out = sample_batch(model, cond, sched, deterministic_last, rng);
    out.index_axis(Axis(0), 0).to_vec()
}

/// Maps a raw model output onto the feasible set: denormalize, clip at
/// zero, rescale to the budget. Falls back to the uniform split when no
/// component is positive. Non-finite components are treated as zero power.
pub fn project_feasible(raw: &[f64], cfg: &ChannelConfig) -> PowerAllocation {
    debug_assert_eq!(raw.len(), cfg.num_channels);
    let budget = cfg.power_budget;
    let mut powers: Vec<f64> = raw
        .iter()
        .map(|r| {
            let p = (r + 1.0) * 0.5 * budget;
            if p.is_finite() && p > 0.0 {
                p
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = powers.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return uniform_allocation(cfg);
    }
    let scale = budget / total;
    powers.iter_mut().for_each(|p| *p *= scale);
    PowerAllocation::from_raw(powers)
}
