//! Deep-RL baseline: a Gaussian policy over pre-squash actions, trained as a
//! contextual bandit (one step per episode, reward = sum rate of the
//! projected allocation) with a REINFORCE estimator, a batch-mean reward
//! baseline and an entropy bonus.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_gains, sum_rate_raw, ChannelConfig, ChannelState, GainDistribution, PowerAllocation};
use crate::error::{Error, Result};
use crate::gdm::project_feasible;
use crate::nn::{Activation, AdamState, DenseNet};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrlConfig {
    pub hidden_layers: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub entropy_weight: f64,
    /// Policy updates during the first phase.
    pub iterations: usize,
    /// Further updates after the distribution shift.
    pub retrain_iterations: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for DrlConfig {
    fn default() -> Self {
        DrlConfig {
            hidden_layers: vec![128, 128],
            batch_size: 256,
            learning_rate: 1e-4,
            entropy_weight: 1e-3,
            iterations: 2000,
            retrain_iterations: 2000,
            log_std_min: -5.0,
            log_std_max: 1.0,
        }
    }
}

/// Gains in, `[mean | log_std]` (2M values) out.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    net: DenseNet,
    num_channels: usize,
    log_std_min: f64,
    log_std_max: f64,
}

impl PolicyModel {
    pub fn new(num_channels: usize, cfg: &DrlConfig, seed: u64) -> Result<Self> {
        let mut dims = vec![num_channels];
        dims.extend_from_slice(&cfg.hidden_layers);
        dims.push(2 * num_channels);
        let net = DenseNet::new(&dims, Activation::Silu, seed)?;
        Self::from_net(net, cfg.log_std_min, cfg.log_std_max)
    }

    pub fn from_net(net: DenseNet, log_std_min: f64, log_std_max: f64) -> Result<Self> {
        let m = net.input_dim();
        if net.output_dim() != 2 * m {
            return Err(Error::DimensionMismatch {
                expected: 2 * m,
                actual: net.output_dim(),
                context: "policy output width",
            });
        }
        if !(log_std_min < log_std_max) {
            return Err(Error::InvalidConfig(format!(
                "log-std clamp [{log_std_min}, {log_std_max}] is empty"
            )));
        }
        Ok(PolicyModel {
            net,
            num_channels: m,
            log_std_min,
            log_std_max,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn log_std_bounds(&self) -> (f64, f64) {
        (self.log_std_min, self.log_std_max)
    }

    /// Means and clamped log-stddevs for a batch of gain rows.
    pub fn distribution(&self, gains: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let out = self.net.forward_batch(gains)?;
        let m = self.num_channels;
        let mean = out.slice(s![.., ..m]).to_owned();
        let (lo, hi) = (self.log_std_min, self.log_std_max);
        let log_std = out.slice(s![.., m..]).mapv(|v| v.clamp(lo, hi));
        Ok((mean, log_std))
    }
}

/// Squashes a pre-squash action into `[-1, 1]` and projects it to powers.
pub fn squash_and_project(raw: &[f64], cfg: &ChannelConfig) -> PowerAllocation {
    let squashed: Vec<f64> = raw.iter().map(|u| u.tanh()).collect();
    project_feasible(&squashed, cfg)
}

/// Acts on a batch of states. Deterministic mode takes the Gaussian mean.
pub fn policy_act_batch<R: Rng + ?Sized>(
    policy: &PolicyModel,
    gains: ArrayView2<f64>,
    cfg: &ChannelConfig,
    rng: &mut R,
    deterministic: bool,
) -> Result<Vec<PowerAllocation>> {
    let (mean, log_std) = policy.distribution(gains)?;
    let raw = if deterministic {
        mean
    } else {
        let mut u = mean;
        u.zip_mut_with(&log_std, |m, &ls| *m += ls.exp() * rng.sample::<f64, _>(StandardNormal));
        u
    };
    Ok(raw
        .rows()
        .into_iter()
        .map(|r| squash_and_project(&r.to_vec(), cfg))
        .collect())
}

pub fn policy_act<R: Rng + ?Sized>(
    policy: &PolicyModel,
    state: &ChannelState,
    cfg: &ChannelConfig,
    rng: &mut R,
    deterministic: bool,
) -> Result<PowerAllocation> {
    let g = ArrayView2::from_shape((1, state.len()), state.gains()).expect("row");
    Ok(policy_act_batch(policy, g, cfg, rng, deterministic)?.remove(0))
}

/// One batch of single-step episodes.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub conditions: Array2<f64>,
    /// Pre-squash Gaussian samples.
    pub raw_actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
    mean: Array2<f64>,
    log_std: Array2<f64>,
    raw_log_std: Array2<f64>,
}

pub fn rollout<R: Rng + ?Sized>(
    policy: &PolicyModel,
    states: &[ChannelState],
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<RolloutBatch> {
    let m = policy.num_channels;
    let conditions = Array2::from_shape_fn((states.len(), m), |(i, j)| states[i].gains()[j]);
    let out = policy.net.forward_batch(conditions.view())?;
    let mean = out.slice(s![.., ..m]).to_owned();
    let raw_log_std = out.slice(s![.., m..]).to_owned();
    let (lo, hi) = (policy.log_std_min, policy.log_std_max);
    let log_std = raw_log_std.mapv(|v| v.clamp(lo, hi));
    let mut raw_actions = mean.clone();
    raw_actions.zip_mut_with(&log_std, |u, &ls| *u += ls.exp() * rng.sample::<f64, _>(StandardNormal));

    let mut rewards = Vec::with_capacity(states.len());
    let mut log_probs = Vec::with_capacity(states.len());
    for i in 0..states.len() {
        let u = raw_actions.row(i).to_vec();
        let alloc = squash_and_project(&u, cfg);
        rewards.push(sum_rate_raw(states[i].gains(), alloc.powers(), cfg.noise_power));
        let lp: f64 = (0..m)
            .map(|j| {
                let z = (u[j] - mean[[i, j]]) / log_std[[i, j]].exp();
                -0.5 * z * z - log_std[[i, j]] - 0.5 * LN_2PI
            })
            .sum();
        log_probs.push(lp);
    }
    Ok(RolloutBatch {
        conditions,
        raw_actions,
        rewards,
        log_probs,
        mean,
        log_std,
        raw_log_std,
    })
}

/// Gradient of the surrogate loss
/// `-(1/n) sum_i A_i log pi(u_i | s_i) - w (1/n) sum_i H(pi(. | s_i))`
/// with respect to the raw network outputs `[mean | log_std]`.
/// Components whose log-std sits outside the clamp get no gradient.
pub fn surrogate_output_gradient(
    batch: &RolloutBatch,
    advantages: &[f64],
    entropy_weight: f64,
    log_std_bounds: (f64, f64),
) -> Array2<f64> {
    let (n, m) = batch.mean.dim();
    let inv_n = 1.0 / n as f64;
    let mut grad = Array2::zeros((n, 2 * m));
    for i in 0..n {
        for j in 0..m {
            let sigma = batch.log_std[[i, j]].exp();
            let z = (batch.raw_actions[[i, j]] - batch.mean[[i, j]]) / sigma;
            grad[[i, j]] = -advantages[i] * z / sigma * inv_n;
            let raw = batch.raw_log_std[[i, j]];
            if raw > log_std_bounds.0 && raw < log_std_bounds.1 {
                grad[[i, m + j]] = (-advantages[i] * (z * z - 1.0) - entropy_weight) * inv_n;
            }
        }
    }
    grad
}

/// Trains the policy on fresh states from `dist` for `iterations` updates.
/// Returns the per-iteration mean reward. Pass `optimizer` to continue an
/// earlier run.
pub fn drl_train<R: Rng + ?Sized>(
    policy: &mut PolicyModel,
    dist: &GainDistribution,
    cfg: &ChannelConfig,
    hp: &DrlConfig,
    iterations: usize,
    optimizer: Option<AdamState>,
    rng: &mut R,
) -> Result<(Vec<f64>, AdamState)> {
    dist.check_matches(cfg)?;
    if policy.num_channels != cfg.num_channels {
        return Err(Error::DimensionMismatch {
            expected: cfg.num_channels,
            actual: policy.num_channels,
            context: "policy width",
        });
    }
    let mut adam = optimizer.unwrap_or_else(|| AdamState::new(&policy.net, hp.learning_rate));
    adam.learning_rate = hp.learning_rate;
    let bounds = policy.log_std_bounds();
    let mut curve = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let states: Vec<ChannelState> = (0..hp.batch_size.max(1)).map(|_| sample_gains(dist, rng)).collect();
        let batch = rollout(policy, &states, cfg, rng)?;
        let mean_reward = batch.rewards.iter().sum::<f64>() / batch.rewards.len() as f64;
        let advantages: Vec<f64> = batch.rewards.iter().map(|r| r - mean_reward).collect();
        let upstream = surrogate_output_gradient(&batch, &advantages, hp.entropy_weight, bounds);
        let cache = policy.net.forward_cached(batch.conditions.view())?;
        let (grads, _) = policy.net.backward_batch(&cache, upstream.view())?;
        if !grads.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch: it,
                loss: mean_reward,
            });
        }
        adam.step(&mut policy.net, &grads);
        curve.push(mean_reward);
    }
    Ok((curve, adam))
}
