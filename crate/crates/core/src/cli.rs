//! Command implementations behind the `diffalloc` binary. Each command
//! resolves its configuration, derives named random streams from the master
//! seed, and writes its outputs atomically.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{PhaseDist, RetrainMode, SimConfig};
use crate::error::{Error, Result};
use crate::gdm::{train, Denoiser, DiffusionSchedule};
use crate::lifecycle::{
    collect_dataset, draw_states, expert_rates, gdm_rates, uniform_rates, virtuous_gain, Lifecycle, Phase,
    RunMetrics,
};
use crate::persist::{
    atomic_write, dataset_csv, load_gdm_checkpoint, loss_curve_csv, metrics_csv, read_dataset, read_to_string,
    reward_curve_csv, write_json, GdmCheckpoint, PolicyCheckpoint, RunManifest, TOOL_VERSION,
};
use crate::seed::{SeedStreams, StreamName};
use crate::channel::{ChannelConfig, ChannelState};

/// Loads a config file, or the embedded defaults when `path` is `None`.
pub fn load_config(path: Option<&Path>) -> Result<SimConfig> {
    match path {
        Some(p) => SimConfig::from_toml_str(&read_to_string(p)?),
        None => Ok(SimConfig::default()),
    }
}

pub fn default_config_text() -> String {
    SimConfig::default().to_toml_string()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn phase_label(p: PhaseDist) -> Phase {
    match p {
        PhaseDist::T1 => Phase::T1,
        PhaseDist::T2 => Phase::T2,
    }
}

/// Writes `run.num_samples` expert pairs drawn from `run.phase` to `out`.
pub fn cmd_collect(config: &SimConfig, out: &Path, seed: u64) -> Result<usize> {
    config.validate()?;
    let channel = config.channel_config()?;
    let dist = config.dist_for(config.run.phase)?;
    let stream = SeedStreams::new(seed).substream(StreamName::Collect);
    let ds = collect_dataset(
        &dist,
        config.run.num_samples,
        &channel,
        config.training.waterfill_tol,
        phase_label(config.run.phase),
        stream,
    )?;
    atomic_write(out, &dataset_csv(&ds)?)?;
    Ok(ds.len())
}

/// Companion path for the loss curve of a checkpoint.
pub fn losses_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint
        .file_stem()
        .map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().into_owned());
    checkpoint.with_file_name(format!("{stem}.losses.csv"))
}

pub struct TrainResult {
    pub checkpoint: GdmCheckpoint,
    pub denoiser: Denoiser,
    pub initial_val_loss: f64,
    pub final_val_loss: f64,
    pub best_val_loss: f64,
}

/// Trains a diffusion model on a dataset file. Nothing is written unless the
/// dataset parses and training completes.
pub fn cmd_train(config: &SimConfig, dataset: &Path, checkpoint_out: &Path, seed: u64) -> Result<TrainResult> {
    config.validate()?;
    let channel = config.channel_config()?;
    let ds = read_dataset(dataset, &channel, phase_label(config.run.phase))?;
    let streams = SeedStreams::new(seed);
    let sched = config.schedule()?;
    let denoiser = Denoiser::new(
        channel.num_channels,
        &config.denoiser.hidden_layers,
        config.denoiser.time_embedding_dim,
        config.diffusion.steps,
        streams.substream(StreamName::GdmInit).derive_seed(),
    )?;
    let mut rng = streams.substream(StreamName::Train).rng();
    let outcome = train(
        denoiser,
        &ds.train_samples(&channel),
        &sched,
        &config.train_config(),
        None,
        &mut rng,
    )?;
    let checkpoint = GdmCheckpoint::new(&outcome.denoiser, channel, config.diffusion, seed);
    write_json(checkpoint_out, &checkpoint)?;
    atomic_write(&losses_path(checkpoint_out), &loss_curve_csv(&outcome.curve)?)?;
    Ok(TrainResult {
        checkpoint,
        initial_val_loss: outcome.curve[0].val_loss,
        final_val_loss: outcome.curve.last().map_or(f64::NAN, |e| e.val_loss),
        best_val_loss: outcome.best_val_loss(),
        denoiser: outcome.denoiser,
    })
}

/// Result of scoring one saved model on a fresh evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub phase: PhaseDist,
    pub eval_size: usize,
    pub mean_sum_rate: f64,
    pub expert_sum_rate: f64,
    pub uniform_sum_rate: f64,
    pub ratio_to_expert: f64,
    pub improvement_over_uniform: f64,
}

impl EvalRow {
    pub const HEADER: &'static str =
        "phase,method,eval_size,mean_sum_rate,expert_sum_rate,uniform_sum_rate,ratio_to_expert,improvement_over_uniform";

    pub fn to_csv_line(&self) -> String {
        let phase = match self.phase {
            PhaseDist::T1 => "t1",
            PhaseDist::T2 => "t2",
        };
        format!(
            "{phase},gdm,{},{:.10},{:.10},{:.10},{:.10},{:.10}",
            self.eval_size,
            self.mean_sum_rate,
            self.expert_sum_rate,
            self.uniform_sum_rate,
            self.ratio_to_expert,
            self.improvement_over_uniform
        )
    }
}

/// Scores a denoiser on `lifecycle.eval_size` fresh states from `run.phase`.
pub fn evaluate_denoiser(
    denoiser: &Denoiser,
    sched: &DiffusionSchedule,
    deterministic_last: bool,
    config: &SimConfig,
    channel: &ChannelConfig,
    seed: u64,
) -> Result<EvalRow> {
    let dist = config.dist_for(config.run.phase)?;
    dist.check_matches(channel)?;
    let stream = SeedStreams::new(seed).substream(StreamName::Evaluate);
    let states: Vec<ChannelState> = draw_states(&dist, config.lifecycle.eval_size, stream);
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let expert = mean(expert_rates(&states, channel, config.training.waterfill_tol));
    let uniform = mean(uniform_rates(&states, channel));
    let gdm = mean(gdm_rates(denoiser, sched, deterministic_last, &states, channel, stream));
    Ok(EvalRow {
        phase: config.run.phase,
        eval_size: states.len(),
        mean_sum_rate: gdm,
        expert_sum_rate: expert,
        uniform_sum_rate: uniform,
        ratio_to_expert: gdm / expert,
        improvement_over_uniform: virtuous_gain(gdm, uniform)?,
    })
}

/// Loads a checkpoint and evaluates it under the config's distribution.
pub fn cmd_evaluate(checkpoint: &Path, config: &SimConfig, seed: u64) -> Result<EvalRow> {
    config.validate()?;
    let ckpt = load_gdm_checkpoint(checkpoint)?;
    let channel = config.channel_config()?;
    if ckpt.channel.num_channels != channel.num_channels || ckpt.channel.power_budget != channel.power_budget {
        return Err(Error::Schema(format!(
            "checkpoint trained for {} channels / budget {}, config has {} / {}",
            ckpt.channel.num_channels, ckpt.channel.power_budget, channel.num_channels, channel.power_budget
        )));
    }
    let denoiser = ckpt.denoiser()?;
    let sched = ckpt.schedule()?;
    evaluate_denoiser(&denoiser, &sched, ckpt.diffusion.deterministic_final_step, config, &channel, seed)
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Runs T1, T2 and T3 in order, writing outputs to `out_dir` as each phase
/// completes so a failure leaves the finished phases on disk.
pub fn cmd_lifecycle(config: &SimConfig, out_dir: &Path, seed: u64) -> Result<RunMetrics> {
    ensure_dir(out_dir)?;
    let life = Lifecycle::new(config.clone(), seed)?;
    let mut manifest = RunManifest::new("lifecycle", config, seed);
    let manifest_path = out_dir.join(MANIFEST_FILE);
    write_json(&manifest_path, &manifest)?;
    let channel = life.channel;
    let diffusion = config.diffusion;

    let t1 = life.run_t1()?;
    write_json(&out_dir.join("gdm_t1.json"), &GdmCheckpoint::new(&t1.denoiser, channel, diffusion, seed))?;
    write_json(&out_dir.join("drl_t1.json"), &PolicyCheckpoint::new(&t1.policy, channel, seed))?;
    atomic_write(&out_dir.join("gdm_t1.losses.csv"), &loss_curve_csv(&t1.loss_curve)?)?;
    atomic_write(&out_dir.join("drl_t1.rewards.csv"), &reward_curve_csv(&t1.drl_curve)?)?;
    atomic_write(&out_dir.join(METRICS_FILE), &metrics_csv(&[&t1.metrics])?)?;
    manifest.completed_phases.push("T1".into());
    write_json(&manifest_path, &manifest)?;

    let t2 = life.run_t2(&t1)?;
    atomic_write(&out_dir.join(METRICS_FILE), &metrics_csv(&[&t1.metrics, &t2.metrics])?)?;
    manifest.completed_phases.push("T2".into());
    write_json(&manifest_path, &manifest)?;

    let t3 = life.run_t3(&t1, &t2)?;
    write_json(&out_dir.join("gdm_t3.json"), &GdmCheckpoint::new(&t3.denoiser, channel, diffusion, seed))?;
    write_json(&out_dir.join("drl_t3.json"), &PolicyCheckpoint::new(&t3.policy, channel, seed))?;
    atomic_write(&out_dir.join("gdm_t3.losses.csv"), &loss_curve_csv(&t3.loss_curve)?)?;
    atomic_write(&out_dir.join("drl_t3.rewards.csv"), &reward_curve_csv(&t3.drl_curve)?)?;
    let metrics = life.summarize(&t1, &t2, &t3);
    atomic_write(&out_dir.join(METRICS_FILE), &metrics_csv(&metrics.phases())?)?;
    write_json(&out_dir.join(SUMMARY_FILE), &metrics)?;

    manifest.completed_phases.push("T3".into());
    manifest.finished_unix_s = Some(crate::persist::unix_now());
    write_json(&manifest_path, &manifest)?;
    Ok(metrics)
}

/// Applies command-line overrides on top of a loaded config.
pub fn apply_overrides(
    config: &mut SimConfig,
    retrain_mode: Option<RetrainMode>,
    phase: Option<PhaseDist>,
) {
    if let Some(mode) = retrain_mode {
        config.lifecycle.retrain_mode = mode;
    }
    if let Some(p) = phase {
        config.run.phase = p;
    }
}

pub fn tool_version() -> &'static str {
    TOOL_VERSION
}
