//! Wireless system model: one base station talking to one user over `M`
//! parallel channels, each with an independent linear power gain.
//!
//! The objective is the Shannon sum rate
//! `R = sum_m log2(1 + g_m * p_m / N0)` in bits per channel use, subject to
//! a total power budget `P`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on `sum(p) == P` for a [`PowerAllocation`].
pub const BUDGET_REL_TOL: f64 = 1e-9;

/// Static link parameters shared by every phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub num_channels: usize,
    /// Per-channel noise power, linear scale.
    pub noise_power: f64,
    /// Total transmit power, linear scale.
    pub power_budget: f64,
}

impl ChannelConfig {
    pub fn new(num_channels: usize, noise_power: f64, power_budget: f64) -> Result<Self> {
        let cfg = ChannelConfig {
            num_channels,
            noise_power,
            power_budget,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_channels == 0 {
            return Err(Error::InvalidConfig("num_channels must be >= 1".into()));
        }
        if !(self.noise_power.is_finite() && self.noise_power > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_power must be positive, got {}",
                self.noise_power
            )));
        }
        if !(self.power_budget.is_finite() && self.power_budget > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "power_budget must be positive, got {}",
                self.power_budget
            )));
        }
        Ok(())
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            num_channels: 20,
            noise_power: 1.0,
            power_budget: 0.3,
        }
    }
}

/// Independent per-channel uniform gain ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainDistribution {
    ranges: Vec<(f64, f64)>,
}

impl GainDistribution {
    pub fn new(ranges: Vec<(f64, f64)>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::InvalidDistribution("no channels".into()));
        }
        for (m, &(lo, hi)) in ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(Error::InvalidDistribution(format!(
                    "channel {m}: need 0 < lo <= hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(GainDistribution { ranges })
    }

    /// The same `[lo, hi]` range on all `num_channels` channels.
    pub fn uniform(num_channels: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![(lo, hi); num_channels])
    }

    /// Calm-weather distribution: the first half of the channels in `[5, 8]`,
    /// the rest in `[3, 6]`.
    pub fn calm(num_channels: usize) -> Self {
        let strong = num_channels / 2;
        let ranges = (0..num_channels)
            .map(|m| if m < strong { (5.0, 8.0) } else { (3.0, 6.0) })
            .collect();
        GainDistribution { ranges }
    }

    /// Storm distribution: every channel in `[1, 7]`.
    pub fn storm(num_channels: usize) -> Self {
        GainDistribution {
            ranges: vec![(1.0, 7.0); num_channels],
        }
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn num_channels(&self) -> usize {
        self.ranges.len()
    }

    pub fn check_matches(&self, cfg: &ChannelConfig) -> Result<()> {
        if self.ranges.len() != cfg.num_channels {
            return Err(Error::DimensionMismatch {
                expected: cfg.num_channels,
                actual: self.ranges.len(),
                context: "gain distribution length",
            });
        }
        Ok(())
    }
}

/// Per-channel linear power gains; the conditioning input of every policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    gains: Vec<f64>,
}

impl ChannelState {
    pub fn new(gains: Vec<f64>) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::InvalidConfig("channel state has no gains".into()));
        }
        if let Some(g) = gains.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::InvalidConfig(format!("gain must be positive, got {g}")));
        }
        Ok(ChannelState { gains })
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }
}

/// Nonnegative per-channel powers summing to the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    powers: Vec<f64>,
}

impl PowerAllocation {
    /// Checks nonnegativity and the budget constraint against `cfg`.
    pub fn new(powers: Vec<f64>, cfg: &ChannelConfig) -> Result<Self> {
        if powers.len() != cfg.num_channels {
            return Err(Error::DimensionMismatch {
                expected: cfg.num_channels,
                actual: powers.len(),
                context: "power allocation length",
            });
        }
        if let Some(p) = powers.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidConfig(format!("power must be >= 0, got {p}")));
        }
        let total: f64 = powers.iter().sum();
        if (total - cfg.power_budget).abs() > BUDGET_REL_TOL * cfg.power_budget {
            return Err(Error::InvalidConfig(format!(
                "powers sum to {total}, budget is {}",
                cfg.power_budget
            )));
        }
        Ok(PowerAllocation { powers })
    }

    pub(crate) fn from_raw(powers: Vec<f64>) -> Self {
        PowerAllocation { powers }
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn total(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn into_powers(self) -> Vec<f64> {
        self.powers
    }
}

/// Draws each gain independently and uniformly from its channel's range.
pub fn sample_gains<R: Rng + ?Sized>(dist: &GainDistribution, rng: &mut R) -> ChannelState {
    let gains = dist
        .ranges
        .iter()
        .map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..=hi) })
        .collect();
    ChannelState { gains }
}

/// Shannon sum rate over raw slices, no validation.
pub(crate) fn sum_rate_raw(gains: &[f64], powers: &[f64], noise_power: f64) -> f64 {
    gains
        .iter()
        .zip(powers)
        .map(|(g, p)| (g * p / noise_power).ln_1p())
        .sum::<f64>()
        / std::f64::consts::LN_2
}

/// Sum rate in bits per channel use.
pub fn sum_rate(state: &ChannelState, alloc: &PowerAllocation, cfg: &ChannelConfig) -> Result<f64> {
    if state.len() != cfg.num_channels {
        return Err(Error::DimensionMismatch {
            expected: cfg.num_channels,
            actual: state.len(),
            context: "channel state length",
        });
    }
    if alloc.powers.len() != cfg.num_channels {
        return Err(Error::DimensionMismatch {
            expected: cfg.num_channels,
            actual: alloc.powers.len(),
            context: "power allocation length",
        });
    }
    Ok(sum_rate_raw(&state.gains, &alloc.powers, cfg.noise_power))
}

/// Equal split of the budget across all channels.
pub fn uniform_allocation(cfg: &ChannelConfig) -> PowerAllocation {
    let share = cfg.power_budget / cfg.num_channels as f64;
    let mut powers = vec![share; cfg.num_channels];
    // Push the rounding residue into the last channel so the sum is exact.
    let head: f64 = powers[..cfg.num_channels - 1].iter().sum();
    powers[cfg.num_channels - 1] = cfg.power_budget - head;
    PowerAllocation { powers }
}
