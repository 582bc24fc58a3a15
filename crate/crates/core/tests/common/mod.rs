//! Reference implementations used only by the integration tests.
#![allow(dead_code)]

use diffalloc::nn::{max_gradient_error, Activation, DenseNet};
use ndarray::Array2;

/// Euclidean projection onto `{p >= 0, sum p = budget}` by sorting.
pub fn project_simplex(v: &[f64], budget: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - budget) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

pub fn rate(gains: &[f64], powers: &[f64], noise: f64) -> f64 {
    gains
        .iter()
        .zip(powers)
        .map(|(g, p)| (1.0 + g * p / noise).log2())
        .sum()
}

/// Maximizes the sum rate by projected gradient ascent from the uniform
/// point. Slow but independent of the water-level construction.
pub fn pga_waterfill(gains: &[f64], budget: f64, noise: f64, iters: usize) -> Vec<f64> {
    let m = gains.len();
    let mut p = vec![budget / m as f64; m];
    let gmax = gains.iter().cloned().fold(0.0, f64::max);
    // gradient is Lipschitz with constant (g/N)^2 / ln 2 at p = 0
    let step = 0.5 * std::f64::consts::LN_2 * (noise / gmax).powi(2);
    for _ in 0..iters {
        let grad: Vec<f64> = gains
            .iter()
            .zip(&p)
            .map(|(g, pi)| g / ((noise + g * pi) * std::f64::consts::LN_2))
            .collect();
        let moved: Vec<f64> = p.iter().zip(&grad).map(|(pi, gi)| pi + step * gi).collect();
        p = project_simplex(&moved, budget);
    }
    p
}

/// Tiny deterministic generator so fixtures do not depend on the crate's
/// own seeding.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// Mean squared error against a constant target of 0.3.
pub fn mse(out: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = out.len() as f64;
    let diff = out.mapv(|o| o - 0.3);
    (diff.mapv(|d| d * d).sum() / n, diff.mapv(|d| 2.0 * d / n))
}

/// Worst relative backprop error over `count` small nets laid out like the
/// denoiser: `[x_t | gains | embedding] -> hidden -> hidden -> M`.
pub fn denoiser_gradient_sweep(count: u64, seed: u64) -> f64 {
    let mut rng = Lcg(seed);
    let mut worst: f64 = 0.0;
    for case in 0..count {
        let m = 2 + (case % 4) as usize;
        let embed = 2 * (1 + (case % 3) as usize);
        let hidden = 3 + (case % 5) as usize;
        let dims = [2 * m + embed, hidden, hidden, m];
        let net = DenseNet::new(&dims, Activation::Silu, seed * 1000 + case).unwrap();
        let batch = 1 + (case % 4) as usize;
        let input = Array2::from_shape_fn((batch, dims[0]), |_| rng.range(-2.0, 2.0));
        let cache = net.forward_cached(input.view()).unwrap();
        let (_, upstream) = mse(cache.output());
        let (grads, dx) = net.backward_batch(&cache, upstream.view()).unwrap();
        worst = worst.max(max_gradient_error(&net, &mse, input.view(), &grads, &dx).unwrap());
    }
    worst
}
