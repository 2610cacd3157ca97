//! Dense feed-forward networks with exact reverse-mode gradients and Adam.
//!
//! Everything is `f64`. Weights are stored row-major (`outputs x inputs`)
//! per layer; hidden layers share one activation and the output layer is
//! always linear. Policies put a softmax on top via [`softmax_categorical`].

use rand::Rng;

use crate::error::{check_dim, Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// A tensor list shaped like the parameters of one [`DenseNet`].
///
/// Used for gradients and for the Adam moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_for(sizes: &[usize]) -> Self {
        let weights = sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = sizes.windows(2).map(|w| vec![0.0; w[1]]).collect();
        Gradients { weights, biases }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.weights.iter().chain(self.biases.iter())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }

    pub fn norm_squared(&self) -> f64 {
        self.tensors().flatten().map(|g| g * g).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.tensors_mut().flatten() {
            *g *= factor;
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += factor * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().flatten().all(|g| g.is_finite())
    }

    /// Flattened view in the same order as [`DenseNet::parameters`].
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().flatten().copied().collect()
    }

    fn same_shape(&self, other: &Gradients) -> bool {
        self.weights.len() == other.weights.len()
            && self.tensors().zip(other.tensors()).all(|(a, b)| a.len() == b.len())
    }
}

/// Intermediate activations of one forward pass, consumed by the backward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `activations[0]` is the input, the last entry the network output.
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace always holds the input")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    hidden_activation: Activation,
    params: Gradients,
    adam: AdamState,
}

impl DenseNet {
    /// Builds a net with weights and biases drawn uniformly from
    /// `±sqrt(1 / fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden_activation)?;
        for (layer, w) in sizes.windows(2).enumerate() {
            let bound = (1.0 / w[0] as f64).sqrt();
            for x in net.params.weights[layer].iter_mut() {
                *x = rng.random_range(-bound..bound);
            }
            for x in net.params.biases[layer].iter_mut() {
                *x = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], hidden_activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Usage(format!(
                "layer sizes must list at least input and output and be positive, got {sizes:?}"
            )));
        }
        let params = Gradients::zeros_for(sizes);
        Ok(DenseNet {
            sizes: sizes.to_vec(),
            hidden_activation,
            adam: AdamState {
                first_moment: params.clone(),
                second_moment: params.clone(),
                step: 0,
            },
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn params(&self) -> &Gradients {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Gradients {
        &mut self.params
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    pub fn num_parameters(&self) -> usize {
        self.params.tensors().map(Vec::len).sum()
    }

    /// Flattened parameters (all weight matrices, then all bias vectors).
    pub fn parameters(&self) -> Vec<f64> {
        self.params.to_flat()
    }

    /// Mutable access to one coordinate of the flattened parameter vector.
    pub fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for t in self.params.tensors_mut() {
            if index < t.len() {
                return &mut t[index];
            }
            index -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients::zeros_for(&self.sizes)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), input.len())?;
        let mut x = input.to_vec();
        for layer in 0..self.num_layers() {
            x = self.layer_forward(layer, &x);
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        check_dim("network input", self.input_dim(), input.len())?;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(input.to_vec());
        for layer in 0..self.num_layers() {
            let next = self.layer_forward(layer, activations.last().unwrap());
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    fn layer_forward(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let n_in = self.sizes[layer];
        let w = &self.params.weights[layer];
        let b = &self.params.biases[layer];
        let last = layer + 1 == self.num_layers();
        let mut out = b.clone();
        for (o, row) in out.iter_mut().zip(w.chunks_exact(n_in)) {
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            *o += acc;
            if !last {
                *o = self.hidden_activation.apply(*o);
            }
        }
        out
    }

    /// Gradient of `upstream · output` with respect to every parameter.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Gradients> {
        let trace = self.forward_trace(input)?;
        let mut grads = self.zero_gradients();
        self.backward_accumulate(&trace, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Adds the parameter gradient of `upstream · output` into `grads` and
    /// returns the gradient with respect to the input.
    pub fn backward_accumulate(
        &self,
        trace: &Trace,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        check_dim("upstream gradient", self.output_dim(), upstream.len())?;
        if !grads.same_shape(&self.params) {
            return Err(Error::Usage("gradient buffer shape does not match network".into()));
        }
        let mut delta = upstream.to_vec();
        for layer in (0..self.num_layers()).rev() {
            let n_in = self.sizes[layer];
            let x = &trace.activations[layer];
            let w = &self.params.weights[layer];
            let gw = &mut grads.weights[layer];
            let gb = &mut grads.biases[layer];
            let mut dx = vec![0.0; n_in];
            for (i, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[i] += d;
                let row = &w[i * n_in..(i + 1) * n_in];
                let grow = &mut gw[i * n_in..(i + 1) * n_in];
                for j in 0..n_in {
                    grow[j] += d * x[j];
                    dx[j] += d * row[j];
                }
            }
            if layer > 0 {
                for (g, a) in dx.iter_mut().zip(x) {
                    *g *= self.hidden_activation.derivative_from_output(*a);
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// One bias-corrected Adam update with `β1 = 0.9`, `β2 = 0.999`.
    pub fn adam_step(&mut self, grads: &Gradients, learning_rate: f64, eps: f64) -> Result<()> {
        if !grads.same_shape(&self.params) {
            return Err(Error::Usage("gradient shape does not match network".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient passed to Adam".into()));
        }
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let params = self.params.tensors_mut();
        let m = self.adam.first_moment.tensors_mut();
        let v = self.adam.second_moment.tensors_mut();
        for (((p, g), m), v) in params.zip(grads.tensors()).zip(m).zip(v) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Polyak averaging towards `source`: `self ← τ·source + (1 − τ)·self`.
    pub fn soft_update_from(&mut self, source: &DenseNet, tau: f64) {
        for (a, b) in self.params.tensors_mut().zip(source.params.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = tau * y + (1.0 - tau) * *x;
            }
        }
    }

    /// Copies parameters only; the optimizer state stays as it is.
    pub fn copy_parameters_from(&mut self, source: &DenseNet) {
        self.params = source.params.clone();
    }
}

/// Scales every gradient by `max_norm / g` when the joint L2 norm `g`
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Gradients], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(factor);
        }
    }
    norm
}

/// A categorical distribution over a finite action set.
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl Categorical {
    /// Wraps explicit probabilities; they must be nonnegative and sum to one.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Usage(format!("not a probability vector: {probs:?}")));
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(Categorical { probs, log_probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, action: usize) -> f64 {
        self.probs[action]
    }

    /// Inverse-CDF sampling from a uniform draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        // Rounding can leave `acc` just below one.
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

/// Max-subtracted softmax.
pub fn softmax_categorical(logits: &[f64]) -> Categorical {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|z| z - max).collect();
    let log_sum = shifted.iter().map(|z| z.exp()).sum::<f64>().ln();
    let log_probs: Vec<f64> = shifted.iter().map(|z| z - log_sum).collect();
    let probs = log_probs.iter().map(|l| l.exp()).collect();
    Categorical { probs, log_probs }
}

/// Shannon entropy in nats, with `0 · log 0 = 0`.
pub fn entropy(dist: &Categorical) -> f64 {
    -dist
        .probs
        .iter()
        .zip(&dist.log_probs)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, l)| p * l)
        .sum::<f64>()
}
