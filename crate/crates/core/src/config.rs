//! Run configuration, read from TOML. Keys carry their units where a unit
//! applies; every field has an embedded default.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, GainDistribution};
use crate::drl::DrlConfig;
use crate::error::{Error, Result};
use crate::gdm::{make_schedule, DiffusionSchedule, TrainConfig};
use crate::waterfill::DEFAULT_TOL;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub schema_version: u32,
    /// Master seed used when the command line does not give one.
    pub seed: u64,
    pub channel: ChannelSection,
    pub diffusion: DiffusionSection,
    pub denoiser: DenoiserSection,
    pub training: TrainingSection,
    pub drl: DrlConfig,
    pub lifecycle: LifecycleSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub num_channels: usize,
    pub noise_power_linear: f64,
    pub power_budget_linear: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// No noise is injected on the last reverse step.
    pub deterministic_final_step: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserSection {
    pub hidden_layers: Vec<usize>,
    pub time_embedding_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    /// Epochs spent retraining after the distribution shift.
    pub retrain_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub waterfill_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainMode {
    /// Continue from the first-phase parameters and optimizer state.
    FineTune,
    /// Fresh network, full epoch budget.
    FromScratch,
}

impl std::str::FromStr for RetrainMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fine_tune" | "fine-tune" => Ok(RetrainMode::FineTune),
            "from_scratch" | "from-scratch" => Ok(RetrainMode::FromScratch),
            other => Err(format!("unknown retrain mode {other:?}")),
        }
    }
}

/// A run of consecutive channels sharing one gain range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSegment {
    pub channels: usize,
    pub lo_linear: f64,
    pub hi_linear: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifecycleSection {
    pub t1_dataset_size: usize,
    pub t2_dataset_size: usize,
    pub eval_size: usize,
    pub retrain_mode: RetrainMode,
    pub t1_gains: Vec<GainSegment>,
    pub t2_gains: Vec<GainSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseDist {
    T1,
    T2,
}

impl std::str::FromStr for PhaseDist {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "t1" => Ok(PhaseDist::T1),
            "t2" => Ok(PhaseDist::T2),
            other => Err(format!("unknown phase {other:?}, expected t1 or t2")),
        }
    }
}

/// Settings for the single-step commands (`collect`, `evaluate`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Which gain distribution to draw from.
    pub phase: PhaseDist,
    pub num_samples: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 2024,
            channel: ChannelSection::default(),
            diffusion: DiffusionSection::default(),
            denoiser: DenoiserSection::default(),
            training: TrainingSection::default(),
            drl: DrlConfig::default(),
            lifecycle: LifecycleSection::default(),
            run: RunSection::default(),
        }
    }
}

impl Default for ChannelSection {
    fn default() -> Self {
        let c = ChannelConfig::default();
        ChannelSection {
            num_channels: c.num_channels,
            noise_power_linear: c.noise_power,
            power_budget_linear: c.power_budget,
        }
    }
}

impl Default for DiffusionSection {
    fn default() -> Self {
        DiffusionSection {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
            deterministic_final_step: true,
        }
    }
}

impl Default for DenoiserSection {
    fn default() -> Self {
        DenoiserSection {
            hidden_layers: vec![128, 128, 128],
            time_embedding_dim: 16,
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            epochs: t.epochs,
            retrain_epochs: 100,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            validation_fraction: t.validation_fraction,
            waterfill_tol: DEFAULT_TOL,
        }
    }
}

impl Default for LifecycleSection {
    fn default() -> Self {
        LifecycleSection {
            t1_dataset_size: 10_000,
            t2_dataset_size: 10_000,
            eval_size: 2000,
            retrain_mode: RetrainMode::FineTune,
            t1_gains: vec![
                GainSegment {
                    channels: 10,
                    lo_linear: 5.0,
                    hi_linear: 8.0,
                },
                GainSegment {
                    channels: 10,
                    lo_linear: 3.0,
                    hi_linear: 6.0,
                },
            ],
            t2_gains: vec![GainSegment {
                channels: 20,
                lo_linear: 1.0,
                hi_linear: 7.0,
            }],
        }
    }
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            phase: PhaseDist::T1,
            num_samples: 10_000,
        }
    }
}

fn expand(segments: &[GainSegment]) -> Result<GainDistribution> {
    let ranges = segments
        .iter()
        .flat_map(|s| std::iter::repeat_n((s.lo_linear, s.hi_linear), s.channels))
        .collect();
    GainDistribution::new(ranges)
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Checks every section and cross-section dimension.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let ch = self.channel_config()?;
        self.t1_dist()?.check_matches(&ch)?;
        self.t2_dist()?.check_matches(&ch)?;
        self.schedule()?;
        let l = &self.lifecycle;
        if l.t1_dataset_size < 100 || l.t2_dataset_size < 100 {
            return Err(Error::InvalidConfig("dataset sizes must be >= 100".into()));
        }
        if l.eval_size == 0 {
            return Err(Error::InvalidConfig("eval_size must be positive".into()));
        }
        let t = &self.training;
        if t.batch_size == 0 || !(t.learning_rate > 0.0) || !(t.waterfill_tol > 0.0) {
            return Err(Error::InvalidConfig(
                "training needs batch_size > 0, learning_rate > 0, waterfill_tol > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&t.validation_fraction) {
            return Err(Error::InvalidConfig("validation_fraction must be in [0, 1)".into()));
        }
        if self.denoiser.hidden_layers.contains(&0) || self.drl.hidden_layers.contains(&0) {
            return Err(Error::InvalidConfig("hidden layer widths must be positive".into()));
        }
        if self.drl.batch_size == 0 || !(self.drl.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("drl needs batch_size > 0 and learning_rate > 0".into()));
        }
        if self.run.num_samples == 0 {
            return Err(Error::InvalidConfig("run.num_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn channel_config(&self) -> Result<ChannelConfig> {
        ChannelConfig::new(
            self.channel.num_channels,
            self.channel.noise_power_linear,
            self.channel.power_budget_linear,
        )
    }

    pub fn t1_dist(&self) -> Result<GainDistribution> {
        expand(&self.lifecycle.t1_gains)
    }

    pub fn t2_dist(&self) -> Result<GainDistribution> {
        expand(&self.lifecycle.t2_gains)
    }

    pub fn dist_for(&self, phase: PhaseDist) -> Result<GainDistribution> {
        match phase {
            PhaseDist::T1 => self.t1_dist(),
            PhaseDist::T2 => self.t2_dist(),
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.diffusion.steps, self.diffusion.beta_start, self.diffusion.beta_end)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            learning_rate: self.training.learning_rate,
            validation_fraction: self.training.validation_fraction,
        }
    }

    pub fn retrain_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: match self.lifecycle.retrain_mode {
                RetrainMode::FineTune => self.training.retrain_epochs,
                RetrainMode::FromScratch => self.training.epochs,
            },
            ..self.train_config()
        }
    }
}
