//! Multilayer perceptron with a softmax head.
//!
//! Parameters live in one flat [`ParamVector`]; for every layer the weight
//! matrix (row-major, `out × in`) is followed by its bias vector. Everything
//! here is a pure function of its inputs.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::invalid("activation", format!("unknown `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

/// Layer widths (input first, class count last) and the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelLayout {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

impl ModelLayout {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("layer_sizes", "need at least 2 layers"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer_sizes", "every layer needs ≥ 1 unit"));
        }
        Ok(Self {
            layer_sizes,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// `(fan_in, fan_out, offset of weights)` per layer; the bias follows
    /// the weights directly.
    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.layer_sizes.windows(2).scan(0usize, |offset, w| {
            let start = *offset;
            *offset += w[0] * w[1] + w[1];
            Some((w[0], w[1], start))
        })
    }
}

/// Flat model parameters bound to a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Arc<ModelLayout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<ModelLayout>) -> Self {
        let n = layout.param_count();
        Self {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(layout: Arc<ModelLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.param_count() {
            return Err(Error::InputShape {
                expected: layout.param_count(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { layout, values })
    }

    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init(layout: Arc<ModelLayout>, seed: u64) -> Self {
        let mut rng = rng::rng(seed);
        let mut values = Vec::with_capacity(layout.param_count());
        for (fan_in, fan_out, _) in layout.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out + fan_out {
                values.push(rng.random_range(-bound..=bound));
            }
        }
        Self { layout, values }
    }

    pub(crate) fn from_raw(layout: Arc<ModelLayout>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), layout.param_count());
        Self { layout, values }
    }

    pub fn layout(&self) -> &Arc<ModelLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self − other`, coordinate-wise.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, factor: f64) -> ParamVector {
        Self::from_raw(
            self.layout.clone(),
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn zip_with(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<ParamVector> {
        if !self.same_layout(other) {
            return Err(Error::LayoutMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_raw(self.layout.clone(), values))
    }

    fn weights(&self, offset: usize, fan_in: usize, fan_out: usize) -> (&[f64], &[f64]) {
        let w = &self.values[offset..offset + fan_in * fan_out];
        let b = &self.values[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        (w, b)
    }
}

/// Borrowed labelled samples, row-major features.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    features: &'a [f64],
    labels: &'a [usize],
    dims: usize,
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [f64], labels: &'a [usize], dims: usize) -> Result<Self> {
        if dims == 0 || features.len() != labels.len() * dims {
            return Err(Error::InputShape {
                expected: labels.len() * dims,
                actual: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            features,
            labels,
            dims,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn sample(&self, i: usize) -> (&'a [f64], usize) {
        (
            &self.features[i * self.dims..(i + 1) * self.dims],
            self.labels[i],
        )
    }
}

/// Per-layer pre-activations and outputs of one forward pass. `outputs[0]` is
/// the input; the last entry holds the softmax probabilities.
struct Trace {
    pre: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn trace(params: &ParamVector, x: &[f64]) -> Trace {
    let layout = &params.layout;
    let n_layers = layout.layer_sizes.len() - 1;
    let mut pre = Vec::with_capacity(n_layers);
    let mut outputs = Vec::with_capacity(n_layers + 1);
    outputs.push(x.to_vec());
    for (l, (fan_in, fan_out, offset)) in layout.layers().enumerate() {
        let (w, b) = params.weights(offset, fan_in, fan_out);
        let input = &outputs[l];
        let z: Vec<f64> = (0..fan_out)
            .map(|o| {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                b[o] + row.iter().zip(input).map(|(wi, xi)| wi * xi).sum::<f64>()
            })
            .collect();
        let mut a = z.clone();
        if l + 1 == n_layers {
            softmax_in_place(&mut a);
        } else {
            a.iter_mut().for_each(|v| *v = layout.activation.apply(*v));
        }
        pre.push(z);
        outputs.push(a);
    }
    Trace { pre, outputs }
}

fn check_input(params: &ParamVector, x: &[f64]) -> Result<()> {
    if x.len() != params.layout.input_dim() {
        return Err(Error::InputShape {
            expected: params.layout.input_dim(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// Class probabilities for one input.
pub fn forward(params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    check_input(params, x)?;
    Ok(trace(params, x).outputs.pop().unwrap())
}

/// Index of the most probable class; ties go to the lowest index.
pub fn predict(params: &ParamVector, x: &[f64]) -> Result<usize> {
    let p = forward(params, x)?;
    Ok(argmax(&p))
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

/// Accumulates `scale · ∇ CE(sample)` into `grad` and returns the sample loss.
fn accumulate_gradient(
    params: &ParamVector,
    x: &[f64],
    label: usize,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let layout = &params.layout;
    let t = trace(params, x);
    let n_layers = t.pre.len();
    let logits = &t.pre[n_layers - 1];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];

    let mut delta: Vec<f64> = t.outputs[n_layers].clone();
    delta[label] -= 1.0;
    let layers: Vec<_> = layout.layers().collect();
    for l in (0..n_layers).rev() {
        let (fan_in, fan_out, offset) = layers[l];
        let input = &t.outputs[l];
        for o in 0..fan_out {
            let d = delta[o] * scale;
            let row = &mut grad[offset + o * fan_in..offset + (o + 1) * fan_in];
            for (g, xi) in row.iter_mut().zip(input) {
                *g += d * xi;
            }
            grad[offset + fan_in * fan_out + o] += d;
        }
        if l > 0 {
            let (w, _) = params.weights(offset, fan_in, fan_out);
            let z_prev = &t.pre[l - 1];
            delta = (0..fan_in)
                .map(|i| {
                    let back: f64 = (0..fan_out).map(|o| w[o * fan_in + i] * delta[o]).sum();
                    back * layout.activation.derivative(z_prev[i], input[i])
                })
                .collect();
        }
    }
    loss
}

/// Mean loss and gradient over the given sample indices.
fn gradient_over(params: &ParamVector, batch: &Batch<'_>, indices: &[usize]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let scale = 1.0 / indices.len() as f64;
    let mut loss = 0.0;
    for &i in indices {
        let (x, y) = batch.sample(i);
        loss += accumulate_gradient(params, x, y, scale, &mut grad);
    }
    (loss * scale, grad)
}

fn check_batch(params: &ParamVector, batch: &Batch<'_>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    if batch.dims != params.layout.input_dim() {
        return Err(Error::InputShape {
            expected: params.layout.input_dim(),
            actual: batch.dims,
        });
    }
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= params.layout.classes()) {
        return Err(Error::invalid("labels", format!("label {bad} out of range")));
    }
    Ok(())
}

/// Mean cross-entropy over `batch` and its gradient.
pub fn loss_and_gradient(params: &ParamVector, batch: &Batch<'_>) -> Result<(f64, ParamVector)> {
    check_batch(params, batch)?;
    let indices: Vec<usize> = (0..batch.len()).collect();
    let (loss, grad) = gradient_over(params, batch, &indices);
    Ok((loss, ParamVector::from_raw(params.layout.clone(), grad)))
}

/// Gradient of the mean cross-entropy over `batch`.
pub fn loss_gradient(params: &ParamVector, batch: &Batch<'_>) -> Result<ParamVector> {
    loss_and_gradient(params, batch).map(|(_, g)| g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

/// Mini-batch SGD without momentum. Sample order is reshuffled every epoch
/// from `seed`.
pub fn local_train(
    params: &ParamVector,
    batch: &Batch<'_>,
    cfg: TrainConfig,
    seed: u64,
) -> Result<ParamVector> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::invalid("lr", "must be positive"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be ≥ 1"));
    }
    if cfg.epochs == 0 {
        return Ok(params.clone());
    }
    check_batch(params, batch)?;
    let mut rng = rng::rng(seed);
    let mut current = params.clone();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grad) = gradient_over(&current, batch, chunk);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            for (p, g) in current.values.iter_mut().zip(&grad) {
                *p -= cfg.lr * g;
            }
        }
        if !current.is_finite() {
            return Err(Error::Divergence { epoch });
        }
    }
    Ok(current)
}

/// `∂p_k/∂x_f` as a row-major `features × classes` matrix.
pub fn input_jacobian(params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    check_input(params, x)?;
    let layout = &params.layout;
    let t = trace(params, x);
    let n_layers = t.pre.len();
    let classes = layout.classes();
    let p = &t.outputs[n_layers];

    // rows: classes, columns: units of the current layer (starting at logits)
    let mut m: Vec<f64> = (0..classes * classes)
        .map(|idx| {
            let (k, j) = (idx / classes, idx % classes);
            let diag = if k == j { p[k] } else { 0.0 };
            diag - p[k] * p[j]
        })
        .collect();
    let mut width = classes;
    let layers: Vec<_> = layout.layers().collect();
    for l in (0..n_layers).rev() {
        let (fan_in, fan_out, offset) = layers[l];
        debug_assert_eq!(fan_out, width);
        let (w, _) = params.weights(offset, fan_in, fan_out);
        let mut next = vec![0.0; classes * fan_in];
        for k in 0..classes {
            let row = &m[k * width..(k + 1) * width];
            let out = &mut next[k * fan_in..(k + 1) * fan_in];
            for (o, &r) in row.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                let wrow = &w[o * fan_in..(o + 1) * fan_in];
                for (dst, wi) in out.iter_mut().zip(wrow) {
                    *dst += r * wi;
                }
            }
        }
        if l > 0 {
            let z_prev = &t.pre[l - 1];
            let a_prev = &t.outputs[l];
            for k in 0..classes {
                for i in 0..fan_in {
                    next[k * fan_in + i] *= layout.activation.derivative(z_prev[i], a_prev[i]);
                }
            }
        }
        m = next;
        width = fan_in;
    }
    // transpose classes × features → features × classes
    let features = width;
    let mut out = vec![0.0; features * classes];
    for k in 0..classes {
        for f in 0..features {
            out[f * classes + k] = m[k * features + f];
        }
    }
    Ok(out)
}
