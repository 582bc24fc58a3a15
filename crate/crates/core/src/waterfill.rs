//! Water-filling expert: the exact sum-rate-maximizing allocation
//! `p_m = max(0, mu - N0 / g_m)` with the water level `mu` chosen so the
//! powers exhaust the budget.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, ChannelState, PowerAllocation};

/// Default relative tolerance on the budget residual.
pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfillSolution {
    pub allocation: PowerAllocation,
    pub water_level: f64,
    pub active_channels: Vec<bool>,
}

impl WaterfillSolution {
    /// Wraps an arbitrary allocation so it can be checked by [`verify_kkt`].
    ///
    /// The water level is the mean of `p_m + N0/g_m` over the channels with
    /// positive power, which is what it would have to be if the allocation
    /// were optimal.
    pub fn from_allocation(
        allocation: PowerAllocation,
        state: &ChannelState,
        cfg: &ChannelConfig,
    ) -> Self {
        let active: Vec<bool> = allocation.powers().iter().map(|&p| p > 0.0).collect();
        let (sum, count) = allocation
            .powers()
            .iter()
            .zip(state.gains())
            .zip(&active)
            .filter(|(_, &a)| a)
            .fold((0.0, 0usize), |(s, c), ((p, g), _)| {
                (s + p + cfg.noise_power / g, c + 1)
            });
        let water_level = if count == 0 { 0.0 } else { sum / count as f64 };
        WaterfillSolution {
            allocation,
            water_level,
            active_channels: active,
        }
    }
}

fn poured(mu: f64, floors: &[f64]) -> f64 {
    floors.iter().map(|f| (mu - f).max(0.0)).sum()
}

/// Solves the water-filling problem for one channel state.
///
/// Bisection on the water level brackets the active set; the level is then
/// recomputed in closed form over that set so the budget is met to rounding.
pub fn waterfill(state: &ChannelState, cfg: &ChannelConfig, tol: f64) -> WaterfillSolution {
    debug_assert_eq!(state.len(), cfg.num_channels);
    let budget = cfg.power_budget;
    let floors: Vec<f64> = state.gains().iter().map(|g| cfg.noise_power / g).collect();
    let min_floor = floors.iter().copied().fold(f64::INFINITY, f64::min);

    let (mut lo, mut hi) = (min_floor, min_floor + budget);
    let mut mu = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTIONS {
        mu = 0.5 * (lo + hi);
        let residual = poured(mu, &floors) - budget;
        if residual.abs() <= tol * budget {
            break;
        }
        if residual > 0.0 {
            hi = mu;
        } else {
            lo = mu;
        }
    }

    // Closed-form level over the bracketed active set. Shrink the set if a
    // channel sits exactly on the boundary and falls out after the update.
    let mut active: Vec<bool> = floors.iter().map(|&f| f < mu).collect();
    if !active.iter().any(|&a| a) {
        let best = floors
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        active[best] = true;
    }
    loop {
        let (sum, count) = floors
            .iter()
            .zip(&active)
            .filter(|(_, &a)| a)
            .fold((0.0, 0usize), |(s, c), (f, _)| (s + f, c + 1));
        mu = (budget + sum) / count as f64;
        let mut changed = false;
        for (a, &f) in active.iter_mut().zip(&floors) {
            if *a && f >= mu {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let powers: Vec<f64> = floors
        .iter()
        .zip(&active)
        .map(|(&f, &a)| if a { mu - f } else { 0.0 })
        .collect();
    WaterfillSolution {
        allocation: PowerAllocation::from_raw(powers),
        water_level: mu,
        active_channels: active,
    }
}

/// Checks the KKT conditions of the sum-rate problem at relative tolerance
/// `tol`: primal feasibility, equal marginal gain `g/(N0 + g p) = 1/mu` on
/// active channels, and `mu <= N0/g` on inactive ones.
pub fn verify_kkt(
    sol: &WaterfillSolution,
    state: &ChannelState,
    cfg: &ChannelConfig,
    tol: f64,
) -> bool {
    let powers = sol.allocation.powers();
    let m = cfg.num_channels;
    if powers.len() != m || state.len() != m || sol.active_channels.len() != m {
        return false;
    }
    if !(sol.water_level.is_finite() && sol.water_level > 0.0) {
        return false;
    }
    if powers.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
        return false;
    }
    let total: f64 = powers.iter().sum();
    if (total - cfg.power_budget).abs() > tol * cfg.power_budget {
        return false;
    }
    let target = 1.0 / sol.water_level;
    for ((&p, &g), &active) in powers.iter().zip(state.gains()).zip(&sol.active_channels) {
        if active != (p > 0.0) {
            return false;
        }
        let marginal = g / (cfg.noise_power + g * p);
        if active {
            if (marginal - target).abs() > tol * target {
                return false;
            }
        } else if marginal > target * (1.0 + tol) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_gains, sum_rate, uniform_allocation, GainDistribution};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solve(gains: &[f64], noise: f64, budget: f64) -> (WaterfillSolution, ChannelState, ChannelConfig) {
        let cfg = ChannelConfig::new(gains.len(), noise, budget).unwrap();
        let state = ChannelState::new(gains.to_vec()).unwrap();
        (waterfill(&state, &cfg, DEFAULT_TOL), state, cfg)
    }

    #[test]
    fn equal_gains_give_uniform() {
        let (sol, _, cfg) = solve(&[2.5; 6], 1.0, 3.0);
        let uni = uniform_allocation(&cfg);
        for (a, b) in sol.allocation.powers().iter().zip(uni.powers()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn single_channel_takes_everything() {
        let (sol, _, _) = solve(&[0.37], 1.0, 4.2);
        assert_eq!(sol.allocation.powers(), &[4.2]);
    }

    #[test]
    fn two_channels_both_active() {
        let (sol, _, _) = solve(&[4.0, 1.0], 1.0, 1.0);
        assert!((sol.water_level - 1.125).abs() < 1e-12);
        assert!((sol.allocation.powers()[0] - 0.875).abs() < 1e-12);
        assert!((sol.allocation.powers()[1] - 0.125).abs() < 1e-12);
        assert_eq!(sol.active_channels, vec![true, true]);
    }

    #[test]
    fn weak_channel_switched_off() {
        let (sol, _, _) = solve(&[10.0, 0.1], 1.0, 0.5);
        assert!((sol.allocation.powers()[0] - 0.5).abs() < 1e-12);
        assert_eq!(sol.allocation.powers()[1], 0.0);
        assert_eq!(sol.active_channels, vec![true, false]);
    }

    #[test]
    fn kkt_holds_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..1000 {
            let m = 1 + i % 20;
            let dist = GainDistribution::uniform(m, 0.05, 9.0).unwrap();
            let state = sample_gains(&dist, &mut rng);
            let cfg = ChannelConfig::new(m, rng.random_range(0.1..3.0), rng.random_range(0.05..10.0)).unwrap();
            let sol = waterfill(&state, &cfg, DEFAULT_TOL);
            assert!(verify_kkt(&sol, &state, &cfg, 1e-8), "state {i}");
            assert!(PowerAllocation::new(sol.allocation.powers().to_vec(), &cfg).is_ok());
        }
    }

    #[test]
    fn kkt_rejects_uniform_on_unequal_gains() {
        let cfg = ChannelConfig::new(3, 1.0, 1.0).unwrap();
        let state = ChannelState::new(vec![1.0, 2.0, 5.0]).unwrap();
        let sol = WaterfillSolution::from_allocation(uniform_allocation(&cfg), &state, &cfg);
        assert!(!verify_kkt(&sol, &state, &cfg, 1e-6));
    }

    #[test]
    fn kkt_accepts_uniform_on_equal_gains() {
        let cfg = ChannelConfig::new(4, 1.0, 2.0).unwrap();
        let state = ChannelState::new(vec![3.0; 4]).unwrap();
        let sol = WaterfillSolution::from_allocation(uniform_allocation(&cfg), &state, &cfg);
        assert!(verify_kkt(&sol, &state, &cfg, 1e-12));
    }

    #[test]
    fn kkt_rejects_infeasible_budget() {
        let (mut sol, state, cfg) = solve(&[4.0, 1.0], 1.0, 1.0);
        sol.allocation = PowerAllocation::from_raw(vec![0.9, 0.125]);
        assert!(!verify_kkt(&sol, &state, &cfg, 1e-8));
    }

    #[test]
    fn dominates_random_feasible_allocations() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dist = GainDistribution::storm(20);
        let cfg = ChannelConfig::default();
        for _ in 0..100 {
            let state = sample_gains(&dist, &mut rng);
            let best = sum_rate(&state, &waterfill(&state, &cfg, DEFAULT_TOL).allocation, &cfg).unwrap();
            for _ in 0..10_000 {
                let raw: Vec<f64> = (0..20).map(|_| -rng.random::<f64>().ln()).collect();
                let s: f64 = raw.iter().sum();
                let p: Vec<f64> = raw.iter().map(|x| x / s * cfg.power_budget).collect();
                let r = crate::channel::sum_rate_raw(state.gains(), &p, cfg.noise_power);
                assert!(r <= best, "{r} > {best}");
            }
        }
    }

    #[test]
    fn allocation_monotone_in_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let dist = GainDistribution::storm(12);
        let cfg = ChannelConfig::new(12, 1.0, 0.7).unwrap();
        for _ in 0..500 {
            let state = sample_gains(&dist, &mut rng);
            let sol = waterfill(&state, &cfg, DEFAULT_TOL);
            let g = state.gains();
            let p = sol.allocation.powers();
            for i in 0..12 {
                for j in 0..12 {
                    if g[i] > g[j] {
                        assert!(p[i] >= p[j]);
                    }
                }
            }
        }
    }
}
