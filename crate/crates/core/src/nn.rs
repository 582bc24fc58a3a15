//! Dense feed-forward networks with hand-written reverse-mode gradients and
//! an Adam optimizer. Everything is `f64`; batches are row-major
//! `(batch, features)` matrices.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementwise nonlinearity applied after every hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x * sigmoid(x)`, smooth everywhere.
    Silu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layer_dims: Vec<usize>,
    /// `weights[l]` has shape `(layer_dims[l + 1], layer_dims[l])`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    hidden_activation: Activation,
    init_seed: u64,
}

/// Parameter-shaped tensors: gradients, Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Intermediate values of a batched forward pass, needed by backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l]` the output of layer `l`.
    activations: Vec<Array2<f64>>,
    /// Pre-activation values of each layer.
    pre: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds the input at least")
    }
}

impl DenseNet {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(layer_dims: &[usize], hidden_activation: Activation, seed: u64) -> Result<Self> {
        check_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit))
            })
            .collect();
        let biases = layer_dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(DenseNet {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            hidden_activation,
            init_seed: seed,
        })
    }

    /// Builds a network from explicit parameters, checking every shape.
    pub fn from_parameters(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        hidden_activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Schema(format!(
                "{} weight matrices but {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut layer_dims = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *layer_dims.last().unwrap() || b.len() != w.nrows() {
                return Err(Error::Schema(format!("layer {l} shapes do not chain")));
            }
            layer_dims.push(w.nrows());
        }
        check_dims(&layer_dims)?;
        if weights.iter().flatten().chain(biases.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Schema("non-finite parameter".into()));
        }
        Ok(DenseNet {
            layer_dims,
            weights,
            biases,
            hidden_activation,
            init_seed: 0,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Mutable access to the `k`-th scalar parameter (weights first, then biases).
    pub fn parameter_mut(&mut self, k: usize) -> &mut f64 {
        flat_slot(&mut self.weights, &mut self.biases, k)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let mut a = input.to_owned();
        let last = self.num_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t());
            z += b;
            if l < last {
                let act = self.hidden_activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward_cached(&self, input: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(input.ncols())?;
        let mut activations = vec![input.to_owned()];
        let mut pre = Vec::with_capacity(self.num_layers());
        let last = self.num_layers() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = activations[l].dot(&w.t());
            z += b;
            let a = if l < last {
                let act = self.hidden_activation;
                z.mapv(|v| act.apply(v))
            } else {
                z.clone()
            };
            pre.push(z);
            activations.push(a);
        }
        Ok(ForwardCache { activations, pre })
    }

    /// Reverse-mode pass for a batch. Returns parameter gradients (summed over
    /// rows) and the gradient with respect to the input rows.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        let out = cache.output();
        if upstream.dim() != out.dim() {
            return Err(Error::DimensionMismatch {
                expected: out.ncols(),
                actual: upstream.ncols(),
                context: "upstream gradient",
            });
        }
        let n_layers = self.num_layers();
        let mut gw = Vec::with_capacity(n_layers);
        let mut gb = Vec::with_capacity(n_layers);
        let mut delta = upstream.to_owned();
        for l in (0..n_layers).rev() {
            gw.push(delta.t().dot(&cache.activations[l]));
            gb.push(delta.sum_axis(Axis(0)));
            let mut upstream_a = delta.dot(&self.weights[l]);
            if l > 0 {
                let act = self.hidden_activation;
                upstream_a.zip_mut_with(&cache.pre[l - 1], |d, &z| *d *= act.derivative(z));
            }
            delta = upstream_a;
        }
        gw.reverse();
        gb.reverse();
        Ok((
            Gradients {
                weights: gw,
                biases: gb,
            },
            delta,
        ))
    }

    /// Single-sample backward pass.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        let cache = self.forward_cached(x)?;
        let u = ArrayView2::from_shape((1, upstream.len()), upstream).expect("contiguous row");
        let (g, dx) = self.backward_batch(&cache, u)?;
        Ok((g, dx.into_raw_vec_and_offset().0))
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: cols,
                context: "network input",
            });
        }
        Ok(())
    }
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(Error::Schema(format!(
            "layer dims must have at least two positive entries, got {layer_dims:?}"
        )));
    }
    Ok(())
}

fn flat_slot<'a>(
    weights: &'a mut [Array2<f64>],
    biases: &'a mut [Array1<f64>],
    mut k: usize,
) -> &'a mut f64 {
    for w in weights.iter_mut() {
        if k < w.len() {
            return w.as_slice_mut().expect("standard layout").get_mut(k).unwrap();
        }
        k -= w.len();
    }
    for b in biases.iter_mut() {
        if k < b.len() {
            return &mut b[k];
        }
        k -= b.len();
    }
    panic!("parameter index out of range");
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn get(&self, k: usize) -> f64 {
        self.iter().nth(k).expect("gradient index out of range")
    }

    pub fn get_mut(&mut self, k: usize) -> &mut f64 {
        flat_slot(&mut self.weights, &mut self.biases, k)
    }

    /// All entries in parameter order.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .flat_map(|w| w.iter().copied())
            .chain(self.biases.iter().flat_map(|b| b.iter().copied()))
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| *w *= s);
        self.biases.iter_mut().for_each(|b| *b *= s);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        AdamState {
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Applies one update to `net` in place.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let lr_t = self.learning_rate * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
        let eps_hat = eps * (1.0 - b2.powi(t)).sqrt();
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr_t * *m / (v.sqrt() + eps_hat);
        };
        for l in 0..net.weights.len() {
            ndarray::Zip::from(&mut net.weights[l])
                .and(&mut self.first_moment.weights[l])
                .and(&mut self.second_moment.weights[l])
                .and(&grads.weights[l])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut net.biases[l])
                .and(&mut self.first_moment.biases[l])
                .and(&mut self.second_moment.biases[l])
                .and(&grads.biases[l])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(state: &mut AdamState, net: &mut DenseNet, grads: &Gradients) {
    state.step(net, grads);
}

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;
/// Components whose magnitude is below this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-3;

/// Scalar loss of a batch of network outputs together with its gradient
/// with respect to those outputs.
pub trait OutputLoss: Fn(&Array2<f64>) -> (f64, Array2<f64>) {}
impl<F: Fn(&Array2<f64>) -> (f64, Array2<f64>)> OutputLoss for F {}

/// Largest relative error between the supplied analytic gradients and
/// central finite differences of `loss(forward(input))`, over all
/// parameters and all input entries.
pub fn max_gradient_error<L: OutputLoss>(
    net: &DenseNet,
    loss_fn: &L,
    input: ArrayView2<f64>,
    param_grads: &Gradients,
    input_grads: &Array2<f64>,
) -> Result<f64> {
    let eval = |n: &DenseNet, x: ArrayView2<f64>| -> Result<f64> { Ok(loss_fn(&n.forward_batch(x)?).0) };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR);

    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for k in 0..net.parameter_count() {
        let orig = *probe.parameter_mut(k);
        *probe.parameter_mut(k) = orig + FD_STEP;
        let up = eval(&probe, input)?;
        *probe.parameter_mut(k) = orig - FD_STEP;
        let down = eval(&probe, input)?;
        *probe.parameter_mut(k) = orig;
        worst = worst.max(rel(param_grads.get(k), (up - down) / (2.0 * FD_STEP)));
    }
    let mut x = input.to_owned();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = x[[r, c]];
        x[[r, c]] = orig + FD_STEP;
        let up = eval(net, x.view())?;
        x[[r, c]] = orig - FD_STEP;
        let down = eval(net, x.view())?;
        x[[r, c]] = orig;
        worst = worst.max(rel(input_grads[[r, c]], (up - down) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}

/// True iff backward agrees with central finite differences to within
/// `tolerance` relative error on every parameter and input entry.
pub fn grad_check<L: OutputLoss>(
    net: &DenseNet,
    loss_fn: &L,
    input: ArrayView2<f64>,
    tolerance: f64,
) -> bool {
    let Ok(cache) = net.forward_cached(input) else {
        return false;
    };
    let (_, upstream) = loss_fn(cache.output());
    let Ok((grads, dx)) = net.backward_batch(&cache, upstream.view()) else {
        return false;
    };
    match max_gradient_error(net, loss_fn, input, &grads, &dx) {
        Ok(err) => err < tolerance,
        Err(_) => false,
    }
}

/// Flat, serializable snapshot of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSnapshot {
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub init_seed: u64,
    /// Row-major `(out, in)` matrices.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<&DenseNet> for NetSnapshot {
    fn from(net: &DenseNet) -> Self {
        NetSnapshot {
            layer_dims: net.layer_dims.clone(),
            hidden_activation: net.hidden_activation,
            init_seed: net.init_seed,
            weights: net.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: net.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }
}

impl TryFrom<NetSnapshot> for DenseNet {
    type Error = Error;

    fn try_from(s: NetSnapshot) -> Result<Self> {
        check_dims(&s.layer_dims)?;
        let n = s.layer_dims.len() - 1;
        if s.weights.len() != n || s.biases.len() != n {
            return Err(Error::Schema(format!(
                "expected {n} layers, found {} weights / {} biases",
                s.weights.len(),
                s.biases.len()
            )));
        }
        let weights = s
            .weights
            .into_iter()
            .zip(s.layer_dims.windows(2))
            .map(|(w, d)| {
                Array2::from_shape_vec((d[1], d[0]), w)
                    .map_err(|e| Error::Schema(format!("weight shape: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let biases = s.biases.into_iter().map(Array1::from_vec).collect();
        let mut net = DenseNet::from_parameters(weights, biases, s.hidden_activation)?;
        if net.layer_dims != s.layer_dims {
            return Err(Error::Schema("layer dims disagree with parameters".into()));
        }
        net.init_seed = s.init_seed;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::StandardNormal;

    fn random_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    fn mse_to(target: Array2<f64>) -> impl Fn(&Array2<f64>) -> (f64, Array2<f64>) {
        move |y: &Array2<f64>| {
            let n = y.len() as f64;
            let diff = y - &target;
            (diff.mapv(|d| d * d).sum() / n, diff * (2.0 / n))
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = DenseNet::from_parameters(
            vec![Array2::eye(3)],
            vec![Array1::zeros(3)],
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn zero_weights_emit_bias() {
        let net = DenseNet::from_parameters(
            vec![Array2::zeros((2, 4))],
            vec![array![0.3, -7.0]],
            Activation::Silu,
        )
        .unwrap();
        assert_eq!(net.forward(&[9.0, 1.0, -3.0, 2.0]).unwrap(), vec![0.3, -7.0]);
    }

    #[test]
    fn two_layer_hand_computation() {
        let net = DenseNet::from_parameters(
            vec![array![[0.5, -1.0], [0.25, 2.0]], array![[1.0, -3.0]]],
            vec![array![0.1, -0.2], array![0.05]],
            Activation::Tanh,
        )
        .unwrap();
        let (x0, x1) = (0.3, -0.4);
        let h0 = (0.5 * x0 - 1.0 * x1 + 0.1f64).tanh();
        let h1 = (0.25 * x0 + 2.0 * x1 - 0.2f64).tanh();
        let expected = h0 - 3.0 * h1 + 0.05;
        let y = net.forward(&[x0, x1]).unwrap();
        assert!((y[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = DenseNet::new(&[3, 4, 2], Activation::Silu, 0).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn linear_input_gradient_is_transpose_action() {
        let w = array![[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]];
        let net = DenseNet::from_parameters(vec![w.clone()], vec![array![0.0, 0.0]], Activation::Identity)
            .unwrap();
        let up = [0.7, -1.1];
        let (_, dx) = net.backward(&[1.0, 2.0, 3.0], &up).unwrap();
        let expected = w.t().dot(&array![0.7, -1.1]);
        for (a, b) in dx.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = DenseNet::new(&[4, 8, 8, 3], Activation::Silu, 5).unwrap();
        let (g, dx) = net.backward(&[0.1, 0.2, 0.3, 0.4], &[0.0; 3]).unwrap();
        assert!(g.iter().all(|v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_three_layer_matches_finite_differences() {
        let net = DenseNet::new(&[5, 7, 6, 3], Activation::Silu, 9).unwrap();
        let x = random_input(4, 5, 10);
        let loss = mse_to(random_input(4, 3, 11));
        assert!(grad_check(&net, &loss, x.view(), 1e-4));
    }

    #[test]
    fn corrupted_gradient_detected() {
        let net = DenseNet::new(&[5, 7, 3], Activation::Silu, 19).unwrap();
        let x = random_input(3, 5, 20);
        let loss = mse_to(random_input(3, 3, 21));
        let cache = net.forward_cached(x.view()).unwrap();
        let (_, up) = loss(cache.output());
        let (mut g, dx) = net.backward_batch(&cache, up.view()).unwrap();
        let ok = max_gradient_error(&net, &loss, x.view(), &g, &dx).unwrap();
        assert!(ok < 1e-4);
        let (k, _) = g
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        *g.get_mut(k) *= 2.0;
        let bad = max_gradient_error(&net, &loss, x.view(), &g, &dx).unwrap();
        assert!(bad > 1e-4, "corruption not detected: {bad}");
    }

    #[test]
    fn linear_quadratic_exact() {
        let net = DenseNet::new(&[3, 2], Activation::Identity, 23).unwrap();
        let x = random_input(2, 3, 24);
        let loss = mse_to(random_input(2, 2, 25));
        assert!(grad_check(&net, &loss, x.view(), 1e-8));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let net = DenseNet::new(&[6, 32, 32, 4], Activation::Silu, 3).unwrap();
        let x = random_input(16, 6, 4);
        assert_eq!(net.forward_batch(x.view()).unwrap(), net.forward_batch(x.view()).unwrap());
    }

    #[test]
    fn glorot_bounds_respected() {
        let net = DenseNet::new(&[10, 30], Activation::Silu, 1).unwrap();
        let limit = (6.0f64 / 40.0).sqrt();
        assert!(net.weights()[0].iter().all(|w| w.abs() < limit));
        assert_eq!(net.parameter_count(), 330);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut net = DenseNet::new(&[3, 4, 2], Activation::Silu, 2).unwrap();
        let before = net.clone();
        let mut adam = AdamState::new(&net, 1e-3);
        adam.step(&mut net, &Gradients::zeros_like(&before));
        assert_eq!(net, before);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut net = DenseNet::new(&[2, 2], Activation::Identity, 4).unwrap();
        let before = net.clone();
        let mut adam = AdamState::new(&net, 0.01);
        let mut g = Gradients::zeros_like(&net);
        for k in 0..net.parameter_count() {
            *g.get_mut(k) = if k % 2 == 0 { 3.0 } else { -0.2 };
        }
        adam.step(&mut net, &g);
        let mut after = net.clone();
        for k in 0..before.parameter_count() {
            let delta = *after.parameter_mut(k) - *before.clone().parameter_mut(k);
            let expected = -0.01 * g.get(k).signum();
            assert!((delta - expected).abs() < 1e-8, "k={k} delta={delta}");
        }
    }

    #[test]
    fn adam_constant_gradient_steps_approach_learning_rate() {
        let mut net = DenseNet::new(&[1, 1], Activation::Identity, 4).unwrap();
        let mut adam = AdamState::new(&net, 0.001);
        let mut g = Gradients::zeros_like(&net);
        *g.get_mut(0) = 0.5;
        *g.get_mut(1) = -4.0;
        let mut last = (0.0, 0.0);
        for _ in 0..2000 {
            let w0 = *net.parameter_mut(0);
            let b0 = *net.parameter_mut(1);
            adam.step(&mut net, &g);
            last = (*net.parameter_mut(0) - w0, *net.parameter_mut(1) - b0);
        }
        assert!((last.0 + 0.001).abs() < 1e-9);
        assert!((last.1 - 0.001).abs() < 1e-9);
    }

    #[test]
    fn snapshot_round_trip() {
        let net = DenseNet::new(&[4, 5, 3], Activation::Silu, 77).unwrap();
        let snap = NetSnapshot::from(&net);
        let json = serde_json::to_string(&snap).unwrap();
        let back: DenseNet = serde_json::from_str::<NetSnapshot>(&json).unwrap().try_into().unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn snapshot_with_bad_shape_rejected() {
        let net = DenseNet::new(&[4, 5, 3], Activation::Silu, 77).unwrap();
        let mut snap = NetSnapshot::from(&net);
        snap.weights[1].pop();
        assert!(matches!(DenseNet::try_from(snap), Err(Error::Schema(_))));
    }
}
