//! The three-phase adaptation cycle.
//!
//! * `T1`: collect expert data under calm channels, train the diffusion
//!   model and the RL baseline, evaluate against expert and uniform.
//! * `T2`: the channel distribution shifts; the T1 models are evaluated
//!   unchanged and fresh expert data is collected under the new conditions.
//! * `T3`: both models are retrained with the new data and evaluated again
//!   on the shifted distribution.
//!
//! Collection and evaluation split their work into fixed-size chunks, each
//! with its own random stream, so results do not depend on thread count.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_gains, sum_rate_raw, uniform_allocation, ChannelConfig, ChannelState, GainDistribution, PowerAllocation};
use crate::config::{RetrainMode, SimConfig};
use crate::drl::{drl_train, policy_act_batch, PolicyModel};
use crate::error::{Error, Result};
use crate::gdm::{project_feasible, sample_batch, train, Denoiser, DiffusionSchedule, EpochLoss, TrainSample};
use crate::nn::AdamState;
use crate::seed::{SeedStreams, StreamName, Substream};
use crate::waterfill::{verify_kkt, waterfill};

/// States per parallel work item.
pub const CHUNK: usize = 250;
/// KKT tolerance every collected expert label must meet.
pub const DATASET_KKT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    T1,
    T2,
    T3,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::T1 => "T1",
            Phase::T2 => "T2-pre",
            Phase::T3 => "T3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSample {
    pub state: ChannelState,
    pub allocation: PowerAllocation,
    pub sum_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertDataset {
    pub samples: Vec<ExpertSample>,
    pub source_phase: Phase,
}

impl ExpertDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn train_samples(&self, cfg: &ChannelConfig) -> Vec<TrainSample> {
        self.samples
            .iter()
            .map(|s| TrainSample::from_expert(&s.state, &s.allocation, cfg))
            .collect()
    }
}

/// Draws `n` states from `dist` and labels each with its verified
/// water-filling allocation.
pub fn collect_dataset(
    dist: &GainDistribution,
    n: usize,
    cfg: &ChannelConfig,
    tol: f64,
    source_phase: Phase,
    stream: Substream,
) -> Result<ExpertDataset> {
    dist.check_matches(cfg)?;
    let states = draw_states(dist, n, stream);
    let samples = states
        .into_par_iter()
        .map(|state| {
            let sol = waterfill(&state, cfg, tol);
            if !verify_kkt(&sol, &state, cfg, DATASET_KKT_TOL) {
                return Err(Error::InvalidDataset(format!(
                    "expert label failed KKT check for gains {:?}",
                    state.gains()
                )));
            }
            let sum_rate = sum_rate_raw(state.gains(), sol.allocation.powers(), cfg.noise_power);
            Ok(ExpertSample {
                state,
                allocation: sol.allocation,
                sum_rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpertDataset {
        samples,
        source_phase,
    })
}

/// `n` i.i.d. states, chunked over the stream.
pub fn draw_states(dist: &GainDistribution, n: usize, stream: Substream) -> Vec<ChannelState> {
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream.chunk_rng(c as u32);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(move |_| sample_gains(dist, &mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

fn gains_matrix(states: &[ChannelState]) -> Array2<f64> {
    let m = states.first().map_or(0, |s| s.len());
    Array2::from_shape_fn((states.len(), m), |(i, j)| states[i].gains()[j])
}

/// `(R_model - R_uniform) / R_uniform`.
pub fn virtuous_gain(r_model: f64, r_uniform: f64) -> Result<f64> {
    if !(r_uniform > 0.0) {
        return Err(Error::NonPositiveBaseline(r_uniform));
    }
    Ok((r_model - r_uniform) / r_uniform)
}

/// Per-state sum rates of the diffusion policy.
pub fn gdm_rates(
    denoiser: &Denoiser,
    sched: &DiffusionSchedule,
    deterministic_last: bool,
    states: &[ChannelState],
    cfg: &ChannelConfig,
    stream: Substream,
) -> Vec<f64> {
    states
        .par_chunks(CHUNK)
        .enumerate()
        .flat_map_iter(|(c, chunk)| {
            let mut rng = stream.chunk_rng(c as u32);
            let raw = sample_batch(denoiser, gains_matrix(chunk).view(), sched, deterministic_last, &mut rng);
            raw.rows()
                .into_iter()
                .zip(chunk)
                .map(|(r, s)| {
                    let p = project_feasible(&r.to_vec(), cfg);
                    sum_rate_raw(s.gains(), p.powers(), cfg.noise_power)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Per-state sum rates of the RL policy acting on its mean.
pub fn drl_rates(policy: &PolicyModel, states: &[ChannelState], cfg: &ChannelConfig) -> Result<Vec<f64>> {
    let per_chunk = states
        .par_chunks(CHUNK)
        .map(|chunk| {
            // deterministic acting consumes no randomness
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
            let allocs = policy_act_batch(policy, gains_matrix(chunk).view(), cfg, &mut rng, true)?;
            Ok(allocs
                .iter()
                .zip(chunk)
                .map(|(a, s)| sum_rate_raw(s.gains(), a.powers(), cfg.noise_power))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_chunk.into_iter().flatten().collect())
}

pub fn expert_rates(states: &[ChannelState], cfg: &ChannelConfig, tol: f64) -> Vec<f64> {
    states
        .par_iter()
        .map(|s| sum_rate_raw(s.gains(), waterfill(s, cfg, tol).allocation.powers(), cfg.noise_power))
        .collect()
}

pub fn uniform_rates(states: &[ChannelState], cfg: &ChannelConfig) -> Vec<f64> {
    let u = uniform_allocation(cfg);
    states
        .iter()
        .map(|s| sum_rate_raw(s.gains(), u.powers(), cfg.noise_power))
        .collect()
}

/// Per-state sum rates of every method on one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct PerStateRates {
    pub expert: Vec<f64>,
    pub gdm: Vec<f64>,
    pub uniform: Vec<f64>,
    pub drl: Vec<f64>,
}

impl PerStateRates {
    /// States where some method beats the expert.
    pub fn dominance_violations(&self) -> usize {
        (0..self.expert.len())
            .filter(|&i| {
                let e = self.expert[i];
                self.gdm[i] > e || self.uniform[i] > e || self.drl[i] > e
            })
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub mean_sum_rate: f64,
    /// `mean(R) / mean(R_expert)`.
    pub ratio_to_expert: f64,
    /// `mean(R / R_expert)`, reported alongside.
    pub mean_ratio_to_expert: f64,
    pub improvement_over_uniform: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub phase: Phase,
    pub eval_size: usize,
    pub expert: MethodStats,
    pub gdm: MethodStats,
    pub uniform: MethodStats,
    pub drl: MethodStats,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn stats(rates: &[f64], expert: &[f64], uniform_mean: f64) -> Result<MethodStats> {
    let m = mean(rates);
    let ratios: Vec<f64> = rates.iter().zip(expert).map(|(r, e)| r / e).collect();
    Ok(MethodStats {
        mean_sum_rate: m,
        ratio_to_expert: m / mean(expert),
        mean_ratio_to_expert: mean(&ratios),
        improvement_over_uniform: virtuous_gain(m, uniform_mean)?,
    })
}

impl PhaseMetrics {
    pub fn from_rates(phase: Phase, rates: &PerStateRates) -> Result<Self> {
        let u = mean(&rates.uniform);
        Ok(PhaseMetrics {
            phase,
            eval_size: rates.expert.len(),
            expert: stats(&rates.expert, &rates.expert, u)?,
            gdm: stats(&rates.gdm, &rates.expert, u)?,
            uniform: stats(&rates.uniform, &rates.expert, u)?,
            drl: stats(&rates.drl, &rates.expert, u)?,
        })
    }

    pub fn method(&self, name: Method) -> &MethodStats {
        match name {
            Method::Expert => &self.expert,
            Method::Gdm => &self.gdm,
            Method::Uniform => &self.uniform,
            Method::Drl => &self.drl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Expert,
    Gdm,
    Uniform,
    Drl,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Expert, Method::Gdm, Method::Uniform, Method::Drl];

    pub fn label(self) -> &'static str {
        match self {
            Method::Expert => "expert",
            Method::Gdm => "gdm",
            Method::Uniform => "uniform",
            Method::Drl => "drl",
        }
    }
}

/// Headline numbers of a full cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub t1: PhaseMetrics,
    pub t2_pre: PhaseMetrics,
    pub t3: PhaseMetrics,
    /// Diffusion model over uniform after T1 training, on T1 states.
    pub improvement_over_uniform: f64,
    /// `1 - ratio_T2 / ratio_T1` of the T1 diffusion model.
    pub degradation_t2: f64,
    /// Retrained diffusion model over uniform on T2 states.
    pub virtuous_gain: f64,
    /// T1 diffusion model over uniform on T2 states, before retraining.
    pub pre_retrain_gain: f64,
    pub drl_virtuous_gain: f64,
}

impl RunMetrics {
    pub fn phases(&self) -> [&PhaseMetrics; 3] {
        [&self.t1, &self.t2_pre, &self.t3]
    }
}

pub struct T1Outcome {
    pub dataset: ExpertDataset,
    pub denoiser: Denoiser,
    pub gdm_optimizer: AdamState,
    pub loss_curve: Vec<EpochLoss>,
    pub policy: PolicyModel,
    pub drl_optimizer: AdamState,
    pub drl_curve: Vec<f64>,
    pub rates: PerStateRates,
    pub metrics: PhaseMetrics,
}

pub struct T2Outcome {
    pub dataset: ExpertDataset,
    pub rates: PerStateRates,
    pub metrics: PhaseMetrics,
    pub degradation_t2: f64,
}

pub struct T3Outcome {
    pub denoiser: Denoiser,
    pub loss_curve: Vec<EpochLoss>,
    pub policy: PolicyModel,
    pub drl_curve: Vec<f64>,
    pub rates: PerStateRates,
    pub metrics: PhaseMetrics,
}

/// Resolved inputs of a lifecycle run.
pub struct Lifecycle {
    pub config: SimConfig,
    pub channel: ChannelConfig,
    pub schedule: DiffusionSchedule,
    pub t1_dist: GainDistribution,
    pub t2_dist: GainDistribution,
    pub streams: SeedStreams,
}

impl Lifecycle {
    pub fn new(config: SimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Lifecycle {
            channel: config.channel_config()?,
            schedule: config.schedule()?,
            t1_dist: config.t1_dist()?,
            t2_dist: config.t2_dist()?,
            streams: SeedStreams::new(seed),
            config,
        })
    }

    fn tol(&self) -> f64 {
        self.config.training.waterfill_tol
    }

    pub fn new_denoiser(&self, seed: u64) -> Result<Denoiser> {
        Denoiser::new(
            self.channel.num_channels,
            &self.config.denoiser.hidden_layers,
            self.config.denoiser.time_embedding_dim,
            self.config.diffusion.steps,
            seed,
        )
    }

    /// Sum rates of every method on `states`.
    pub fn evaluate(
        &self,
        denoiser: &Denoiser,
        policy: &PolicyModel,
        states: &[ChannelState],
        sample_stream: Substream,
    ) -> Result<PerStateRates> {
        let det = self.config.diffusion.deterministic_final_step;
        Ok(PerStateRates {
            expert: expert_rates(states, &self.channel, self.tol()),
            gdm: gdm_rates(denoiser, &self.schedule, det, states, &self.channel, sample_stream),
            uniform: uniform_rates(states, &self.channel),
            drl: drl_rates(policy, states, &self.channel)?,
        })
    }

    pub fn run_t1(&self) -> Result<T1Outcome> {
        let cfg = &self.config;
        let dataset = collect_dataset(
            &self.t1_dist,
            cfg.lifecycle.t1_dataset_size,
            &self.channel,
            self.tol(),
            Phase::T1,
            self.streams.substream(StreamName::T1Data),
        )?;
        let denoiser = self.new_denoiser(self.streams.substream(StreamName::GdmInit).derive_seed())?;
        let mut rng = self.streams.substream(StreamName::T1Train).rng();
        let outcome = train(
            denoiser,
            &dataset.train_samples(&self.channel),
            &self.schedule,
            &cfg.train_config(),
            None,
            &mut rng,
        )?;

        let mut policy = PolicyModel::new(
            self.channel.num_channels,
            &cfg.drl,
            self.streams.substream(StreamName::DrlInit).derive_seed(),
        )?;
        let mut drl_rng = self.streams.substream(StreamName::DrlT1Train).rng();
        let (drl_curve, drl_optimizer) = drl_train(
            &mut policy,
            &self.t1_dist,
            &self.channel,
            &cfg.drl,
            cfg.drl.iterations,
            None,
            &mut drl_rng,
        )?;

        let eval = self.streams.substream(StreamName::T1Eval);
        let states = draw_states(&self.t1_dist, cfg.lifecycle.eval_size, eval);
        let rates = self.evaluate(&outcome.denoiser, &policy, &states, eval)?;
        let metrics = PhaseMetrics::from_rates(Phase::T1, &rates)?;
        Ok(T1Outcome {
            dataset,
            denoiser: outcome.denoiser,
            gdm_optimizer: outcome.optimizer,
            loss_curve: outcome.curve,
            policy,
            drl_optimizer,
            drl_curve,
            rates,
            metrics,
        })
    }

    pub fn run_t2(&self, t1: &T1Outcome) -> Result<T2Outcome> {
        let eval = self.streams.substream(StreamName::T2Eval);
        let states = draw_states(&self.t2_dist, self.config.lifecycle.eval_size, eval);
        let rates = self.evaluate(&t1.denoiser, &t1.policy, &states, eval)?;
        let metrics = PhaseMetrics::from_rates(Phase::T2, &rates)?;
        let degradation_t2 = 1.0 - metrics.gdm.ratio_to_expert / t1.metrics.gdm.ratio_to_expert;
        let dataset = collect_dataset(
            &self.t2_dist,
            self.config.lifecycle.t2_dataset_size,
            &self.channel,
            self.tol(),
            Phase::T2,
            self.streams.substream(StreamName::T2Data),
        )?;
        Ok(T2Outcome {
            dataset,
            rates,
            metrics,
            degradation_t2,
        })
    }

    pub fn run_t3(&self, t1: &T1Outcome, t2: &T2Outcome) -> Result<T3Outcome> {
        use rand::seq::SliceRandom;

        if t2.dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let cfg = &self.config;
        let mut rng = self.streams.substream(StreamName::T3Train).rng();
        let mut pooled = t1.dataset.train_samples(&self.channel);
        pooled.extend(t2.dataset.train_samples(&self.channel));
        pooled.shuffle(&mut rng);

        let (start, optimizer) = match cfg.lifecycle.retrain_mode {
            RetrainMode::FineTune => (t1.denoiser.clone(), Some(t1.gdm_optimizer.clone())),
            RetrainMode::FromScratch => (
                self.new_denoiser(self.streams.substream(StreamName::GdmInit).derive_seed())?,
                None,
            ),
        };
        let outcome = train(start, &pooled, &self.schedule, &cfg.retrain_config(), optimizer, &mut rng)?;

        let mut policy = t1.policy.clone();
        let mut drl_rng = self.streams.substream(StreamName::DrlT3Train).rng();
        let (drl_curve, _) = drl_train(
            &mut policy,
            &self.t2_dist,
            &self.channel,
            &cfg.drl,
            cfg.drl.retrain_iterations,
            Some(t1.drl_optimizer.clone()),
            &mut drl_rng,
        )?;

        let eval = self.streams.substream(StreamName::T3Eval);
        let states = draw_states(&self.t2_dist, cfg.lifecycle.eval_size, eval);
        let rates = self.evaluate(&outcome.denoiser, &policy, &states, eval)?;
        let metrics = PhaseMetrics::from_rates(Phase::T3, &rates)?;
        Ok(T3Outcome {
            denoiser: outcome.denoiser,
            loss_curve: outcome.curve,
            policy,
            drl_curve,
            rates,
            metrics,
        })
    }

    pub fn summarize(&self, t1: &T1Outcome, t2: &T2Outcome, t3: &T3Outcome) -> RunMetrics {
        RunMetrics {
            t1: t1.metrics.clone(),
            t2_pre: t2.metrics.clone(),
            t3: t3.metrics.clone(),
            improvement_over_uniform: t1.metrics.gdm.improvement_over_uniform,
            degradation_t2: t2.degradation_t2,
            virtuous_gain: t3.metrics.gdm.improvement_over_uniform,
            pre_retrain_gain: t2.metrics.gdm.improvement_over_uniform,
            drl_virtuous_gain: t3.metrics.drl.improvement_over_uniform,
        }
    }
}
