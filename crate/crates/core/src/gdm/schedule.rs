use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear-beta DDPM noise schedule. Steps are numbered `1..=T`; index
/// `t - 1` into the vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    num_steps: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps {
            return Err(Error::StepOutOfRange {
                step: t,
                max: self.num_steps,
            });
        }
        Ok(())
    }
}

/// Betas linearly spaced from `beta_lo` (step 1) to `beta_hi` (step `T`).
pub fn make_schedule(num_steps: usize, beta_lo: f64, beta_hi: f64) -> Result<DiffusionSchedule> {
    if num_steps == 0 {
        return Err(Error::InvalidSchedule("need at least one step".into()));
    }
    if !(beta_lo > 0.0 && beta_lo <= beta_hi && beta_hi < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_lo <= beta_hi < 1, got [{beta_lo}, {beta_hi}]"
        )));
    }
    let betas: Vec<f64> = if num_steps == 1 {
        vec![beta_lo]
    } else {
        let span = (num_steps - 1) as f64;
        (0..num_steps)
            .map(|i| beta_lo + (beta_hi - beta_lo) * i as f64 / span)
            .collect()
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(DiffusionSchedule {
        num_steps,
        betas,
        alphas,
        alpha_bars,
    })
}
