//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints a PASS/FAIL line even when an earlier one fails.

mod common;

use std::time::{Duration, Instant};

use common::{denoiser_gradient_sweep, pga_waterfill, rate, Lcg};
use diffalloc::channel::{sum_rate, ChannelConfig, ChannelState};
use diffalloc::cli::{cmd_evaluate, cmd_lifecycle, METRICS_FILE};
use diffalloc::config::{PhaseDist, SimConfig};
use diffalloc::gdm::{forward_noise, make_schedule};
use diffalloc::lifecycle::{Lifecycle, PerStateRates};
use diffalloc::persist::metrics_csv;
use diffalloc::waterfill::{verify_kkt, waterfill, DEFAULT_TOL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id}: {name}: {detail}");
        if !pass {
            self.failures += 1;
        }
    }
}

fn expert_oracle_agreement() -> (bool, String) {
    let start = Instant::now();
    let mut rng = Lcg(2024);
    let mut worst_rel: f64 = 0.0;
    for i in 0..1000 {
        let m = 2 + i % 3;
        let budget = rng.range(0.1, 5.0);
        let noise = rng.range(0.5, 2.0);
        let gains: Vec<f64> = (0..m).map(|_| rng.range(0.1, 10.0)).collect();
        let cfg = ChannelConfig::new(m, noise, budget).unwrap();
        let state = ChannelState::new(gains.clone()).unwrap();
        let ours = sum_rate(&state, &waterfill(&state, &cfg, DEFAULT_TOL).allocation, &cfg).unwrap();
        let oracle = rate(&gains, &pga_waterfill(&gains, budget, noise, 100_000), noise);
        worst_rel = worst_rel.max((ours - oracle).abs() / oracle);
    }
    let cfg = ChannelConfig::default();
    let mut kkt_failures = 0;
    for _ in 0..10_000 {
        let gains: Vec<f64> = (0..cfg.num_channels).map(|_| rng.range(0.1, 10.0)).collect();
        let state = ChannelState::new(gains).unwrap();
        if !verify_kkt(&waterfill(&state, &cfg, DEFAULT_TOL), &state, &cfg, 1e-8) {
            kkt_failures += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_rel <= 1e-6 && kkt_failures == 0 && elapsed < Duration::from_secs(30);
    (
        pass,
        format!("worst relative rate gap {worst_rel:.2e}, KKT failures {kkt_failures}/10000, {elapsed:.1?}"),
    )
}

fn gradient_integrity() -> (bool, String) {
    let start = Instant::now();
    let worst = denoiser_gradient_sweep(50, 7);
    let elapsed = start.elapsed();
    (
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!("worst relative error {worst:.2e} over 50 nets, {elapsed:.1?}"),
    )
}

fn forward_statistics() -> (bool, String) {
    let start = Instant::now();
    let cfg = SimConfig::default();
    let sched = make_schedule(cfg.diffusion.steps, cfg.diffusion.beta_start, cfg.diffusion.beta_end).unwrap();
    let x0 = [1.0, -1.0, 0.9, -0.9];
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for t in [1, sched.num_steps() / 2, sched.num_steps()] {
        let mut sum = [0.0; 4];
        let mut sum_sq = [0.0; 4];
        for _ in 0..n {
            let eps: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
            let xt = forward_noise(&x0, t, &eps, &sched).unwrap();
            for k in 0..4 {
                sum[k] += xt[k];
                sum_sq[k] += xt[k] * xt[k];
            }
        }
        let ab = sched.alpha_bar(t);
        let mut pooled_var = 0.0;
        for k in 0..4 {
            let mean = sum[k] / n as f64;
            let expected = ab.sqrt() * x0[k];
            worst_mean = worst_mean.max((mean - expected).abs() / expected.abs());
            pooled_var += (sum_sq[k] / n as f64 - mean * mean) / 4.0;
        }
        worst_var = worst_var.max((pooled_var - (1.0 - ab)).abs() / (1.0 - ab));
    }
    let elapsed = start.elapsed();
    (
        worst_mean <= 0.01 && worst_var <= 0.01 && elapsed < Duration::from_secs(30),
        format!("worst mean error {worst_mean:.3e}, worst variance error {worst_var:.3e}, {elapsed:.1?}"),
    )
}

fn count_violations(sets: &[(&str, &PerStateRates)]) -> (usize, usize) {
    let total = sets.iter().map(|(_, r)| r.expert.len()).sum();
    (sets.iter().map(|(_, r)| r.dominance_violations()).sum(), total)
}

fn main() {
    let mut report = Report { failures: 0 };

    let (ok, detail) = expert_oracle_agreement();
    report.record(1, "expert matches oracle and KKT", ok, detail);
    let (ok, detail) = gradient_integrity();
    report.record(2, "backprop matches finite differences", ok, detail);
    let (ok, detail) = forward_statistics();
    report.record(3, "forward noising moments", ok, detail);

    let config = SimConfig::default();
    let seed = config.seed;
    let life = Lifecycle::new(config.clone(), seed).expect("default config is valid");
    let cycle_start = Instant::now();
    let t1 = life.run_t1().expect("T1 phase");
    let t1_time = cycle_start.elapsed();
    let m1 = &t1.metrics.gdm;
    report.record(
        4,
        "T1 imitation quality",
        m1.ratio_to_expert >= 0.97
            && m1.mean_ratio_to_expert >= 0.97
            && (0.08..=0.30).contains(&m1.improvement_over_uniform)
            && t1_time < Duration::from_secs(600),
        format!(
            "ratio {:.4} (per-state mean {:.4}), improvement over uniform {:.4}, {t1_time:.1?}",
            m1.ratio_to_expert, m1.mean_ratio_to_expert, m1.improvement_over_uniform
        ),
    );

    let t2 = life.run_t2(&t1).expect("T2 phase");
    let mut control_cfg = config.clone();
    control_cfg.lifecycle.t2_gains = control_cfg.lifecycle.t1_gains.clone();
    let control_life = Lifecycle::new(control_cfg, seed).expect("control config is valid");
    let control = control_life.run_t2(&t1).expect("control T2 phase");
    let drop = m1.ratio_to_expert - t2.metrics.gdm.ratio_to_expert;
    let control_drop = m1.ratio_to_expert - control.metrics.gdm.ratio_to_expert;
    report.record(
        5,
        "distribution shift degrades the T1 model",
        drop >= 0.02 && control_drop.abs() <= 0.01,
        format!("drop {:.2} points, control drop {:.2} points", 100.0 * drop, 100.0 * control_drop),
    );

    let t3 = life.run_t3(&t1, &t2).expect("T3 phase");
    let cycle_time = cycle_start.elapsed();
    let metrics = life.summarize(&t1, &t2, &t3);
    report.record(
        6,
        "retraining recovers on the shifted distribution",
        metrics.virtuous_gain >= 0.08
            && metrics.virtuous_gain > metrics.pre_retrain_gain
            && metrics.virtuous_gain > metrics.drl_virtuous_gain
            && cycle_time < Duration::from_secs(900),
        format!(
            "gain {:.4}, before retraining {:.4}, DRL {:.4}, cycle {cycle_time:.1?}",
            metrics.virtuous_gain, metrics.pre_retrain_gain, metrics.drl_virtuous_gain
        ),
    );

    let (violations, states) = count_violations(&[
        ("T1", &t1.rates),
        ("T2-pre", &t2.rates),
        ("T2-control", &control.rates),
        ("T3", &t3.rates),
    ]);
    report.record(
        7,
        "expert dominates every method per state",
        violations == 0,
        format!("{violations} violations over {states} state evaluations"),
    );

    // second run goes through the CLI path on a different thread count
    let first = metrics_csv(&metrics.phases()).expect("metrics table");
    let dir = tempfile::tempdir().expect("temp dir");
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().expect("thread pool");
    let rerun = pool.install(|| cmd_lifecycle(&config, dir.path(), seed));
    let (ok, detail) = match rerun {
        Ok(_) => {
            let second = std::fs::read(dir.path().join(METRICS_FILE)).expect("metrics file");
            (second == first, format!("metrics tables identical: {}", second == first))
        }
        Err(e) => (false, format!("second run failed: {e}")),
    };
    report.record(8, "repeat run reproduces metrics byte for byte", ok, detail);

    // saved T1 model scored through the evaluate command
    let ckpt = dir.path().join("gdm_t1.json");
    let mut on_t2 = config.clone();
    on_t2.run.phase = PhaseDist::T2;
    match (cmd_evaluate(&ckpt, &config, seed), cmd_evaluate(&ckpt, &on_t2, seed)) {
        (Ok(a), Ok(b)) => {
            let ok = a.ratio_to_expert >= 0.97 && b.ratio_to_expert < a.ratio_to_expert;
            println!(
                "[{}] saved T1 model: ratio {:.4} on T1 states, {:.4} on T2 states",
                if ok { "PASS" } else { "FAIL" },
                a.ratio_to_expert,
                b.ratio_to_expert
            );
            if !ok {
                report.failures += 1;
            }
        }
        (a, b) => {
            println!("[FAIL] saved T1 model could not be evaluated: {:?} {:?}", a.err(), b.err());
            report.failures += 1;
        }
    }

    println!("{} check(s) failed", report.failures);
    if report.failures > 0 {
        std::process::exit(1);
    }
}
