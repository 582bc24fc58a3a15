use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet};

/// Highest angular frequency of the sinusoidal step embedding.
const MAX_FREQUENCY: f64 = 1000.0;

/// Sinusoidal features of `t / T`: `dim / 2` sines followed by `dim / 2`
/// cosines, with geometrically spaced frequencies from 1000 down.
pub fn time_embedding(t: usize, num_steps: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let phase = t as f64 / num_steps as f64;
    let freq = |k: usize| MAX_FREQUENCY.powf(1.0 - k as f64 / half as f64);
    let mut out: Vec<f64> = (0..half).map(|k| (phase * freq(k)).sin()).collect();
    out.extend((0..half).map(|k| (phase * freq(k)).cos()));
    out.resize(dim, 0.0);
    out
}

/// Anything that predicts the injected noise from `(x_t, condition, t)`.
pub trait EpsilonModel: Sync {
    fn action_dim(&self) -> usize;

    /// One row per sample; `steps[i]` is the diffusion step of row `i`.
    fn predict_eps(
        &self,
        x_t: ArrayView2<f64>,
        conditions: ArrayView2<f64>,
        steps: &[usize],
    ) -> Array2<f64>;
}

/// Conditional noise-prediction network. Input row layout is
/// `[x_t (M) | gains (M) | embed(t)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    net: DenseNet,
    action_dim: usize,
    condition_dim: usize,
    embed_dim: usize,
    num_steps: usize,
    embed_table: Array2<f64>,
}

impl Denoiser {
    pub fn new(
        num_channels: usize,
        hidden: &[usize],
        embed_dim: usize,
        num_steps: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut dims = vec![2 * num_channels + embed_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_channels);
        let net = DenseNet::new(&dims, Activation::Silu, seed)?;
        Self::from_net(net, num_channels, embed_dim, num_steps)
    }

    pub fn from_net(
        net: DenseNet,
        num_channels: usize,
        embed_dim: usize,
        num_steps: usize,
    ) -> Result<Self> {
        if net.input_dim() != 2 * num_channels + embed_dim {
            return Err(Error::DimensionMismatch {
                expected: 2 * num_channels + embed_dim,
                actual: net.input_dim(),
                context: "denoiser input width",
            });
        }
        if net.output_dim() != num_channels {
            return Err(Error::DimensionMismatch {
                expected: num_channels,
                actual: net.output_dim(),
                context: "denoiser output width",
            });
        }
        if num_steps == 0 {
            return Err(Error::InvalidSchedule("denoiser needs at least one step".into()));
        }
        let mut embed_table = Array2::zeros((num_steps, embed_dim));
        for t in 1..=num_steps {
            let e = time_embedding(t, num_steps, embed_dim);
            embed_table.row_mut(t - 1).assign(&ndarray::Array1::from(e));
        }
        Ok(Denoiser {
            net,
            action_dim: num_channels,
            condition_dim: num_channels,
            embed_dim,
            num_steps,
            embed_table,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub(crate) fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn condition_dim(&self) -> usize {
        self.condition_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    /// Concatenates the network input rows.
    pub fn build_input(
        &self,
        x_t: ArrayView2<f64>,
        conditions: ArrayView2<f64>,
        steps: &[usize],
    ) -> Array2<f64> {
        let n = x_t.nrows();
        let m = self.action_dim;
        let mut input = Array2::zeros((n, 2 * m + self.embed_dim));
        input.slice_mut(s![.., ..m]).assign(&x_t);
        input.slice_mut(s![.., m..2 * m]).assign(&conditions);
        for (i, &t) in steps.iter().enumerate() {
            input
                .slice_mut(s![i, 2 * m..])
                .assign(&self.embed_table.row(t - 1));
        }
        input
    }
}

impl EpsilonModel for Denoiser {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn predict_eps(
        &self,
        x_t: ArrayView2<f64>,
        conditions: ArrayView2<f64>,
        steps: &[usize],
    ) -> Array2<f64> {
        let input = self.build_input(x_t, conditions, steps);
        self.net
            .forward_batch(input.view())
            .expect("input width fixed at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_shape_and_range() {
        let e = time_embedding(7, 50, 16);
        assert_eq!(e.len(), 16);
        assert!(e.iter().all(|v| v.abs() <= 1.0));
        // sin^2 + cos^2 = 1 per frequency
        for k in 0..8 {
            assert!((e[k] * e[k] + e[k + 8] * e[k + 8] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn embeddings_distinct_across_steps() {
        let all: Vec<Vec<f64>> = (1..=50).map(|t| time_embedding(t, 50, 16)).collect();
        for i in 0..50 {
            for j in i + 1..50 {
                let d: f64 = all[i].iter().zip(&all[j]).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d > 1e-3, "steps {} and {} collide", i + 1, j + 1);
            }
        }
    }

    #[test]
    fn input_layout() {
        let d = Denoiser::new(3, &[8], 4, 10, 0).unwrap();
        let x = ndarray::array![[1.0, 2.0, 3.0]];
        let c = ndarray::array![[4.0, 5.0, 6.0]];
        let input = d.build_input(x.view(), c.view(), &[2]);
        assert_eq!(input.ncols(), 10);
        assert_eq!(input.slice(s![0, ..6]).to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(input.slice(s![0, 6..]).to_vec(), time_embedding(2, 10, 4));
    }

    #[test]
    fn mismatched_net_rejected() {
        let net = DenseNet::new(&[9, 4, 3], Activation::Silu, 0).unwrap();
        assert!(Denoiser::from_net(net, 3, 4, 10).is_err());
    }
}
