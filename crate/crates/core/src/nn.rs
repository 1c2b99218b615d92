//! Two-hidden-layer ReLU classifier with softmax output, trained by
//! mini-batch SGD with momentum and an optional proximal penalty.
//!
//! Dense layers store weights as `fan_in x fan_out` row-major matrices, so
//! a layer computes `z = a W + b`. Parameters are laid out as
//! `W1, b1, W2, b2, W3, b3` inside a [`ParamVector`].

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data_synth::Split;
use crate::error::{Error, Result};
use crate::params::{ParamVector, Shape};
use crate::seed::SimRng;
use crate::{NUM_CLASSES, NUM_FEATURES};

/// Floor applied to the true-class probability before taking its log.
pub const LOG_FLOOR: f64 = 1e-12;

const HIDDEN_MIN: usize = 10;
const HIDDEN_MAX: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpConfig {
    hidden: [usize; 2],
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: [16, 16] }
    }
}

impl MlpConfig {
    pub fn new(hidden1: usize, hidden2: usize) -> Result<Self> {
        for h in [hidden1, hidden2] {
            if !(HIDDEN_MIN..=HIDDEN_MAX).contains(&h) {
                return Err(Error::InvalidParameter(format!(
                    "hidden width {h} outside [{HIDDEN_MIN}, {HIDDEN_MAX}]"
                )));
            }
        }
        Ok(Self {
            hidden: [hidden1, hidden2],
        })
    }

    pub fn hidden(&self) -> [usize; 2] {
        self.hidden
    }

    pub fn layer_sizes(&self) -> [usize; 4] {
        [NUM_FEATURES, self.hidden[0], self.hidden[1], NUM_CLASSES]
    }

    pub fn shapes(&self) -> Vec<Shape> {
        self.layer_sizes()
            .windows(2)
            .flat_map(|w| {
                [
                    Shape::Matrix {
                        rows: w[0],
                        cols: w[1],
                    },
                    Shape::Vector(w[1]),
                ]
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.shapes().iter().map(|s| s.len()).sum()
    }

    fn check(&self, params: &ParamVector) -> Result<()> {
        if params.shapes() != self.shapes().as_slice() {
            return Err(Error::Dimension(format!(
                "parameter shapes {:?} do not match network {:?}",
                params.shapes(),
                self.layer_sizes()
            )));
        }
        Ok(())
    }

    fn dense_layers(&self) -> [Dense; 3] {
        let sizes = self.layer_sizes();
        let mut offset = 0;
        std::array::from_fn(|l| {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let layer = Dense {
                weights: offset,
                bias: offset + fan_in * fan_out,
                fan_in,
                fan_out,
            };
            offset += fan_in * fan_out + fan_out;
            layer
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    weights: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Dense {
    fn apply(&self, params: &[f64], input: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&params[self.bias..self.bias + self.fan_out]);
        let w = &params[self.weights..self.weights + self.fan_in * self.fan_out];
        for (a, row) in input.iter().zip(w.chunks_exact(self.fan_out)) {
            for (o, wij) in out.iter_mut().zip(row) {
                *o += a * wij;
            }
        }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_model(rng: &mut SimRng, config: &MlpConfig) -> ParamVector {
    let mut params = ParamVector::zeros(config.shapes());
    let values = params.values_mut();
    for layer in config.dense_layers() {
        let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for w in &mut values[layer.weights..layer.weights + layer.fan_in * layer.fan_out] {
            *w = rng.random_range(-bound..=bound);
        }
    }
    params
}

/// Numerically stable softmax, in place.
pub fn softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    for z in logits.iter_mut() {
        *z /= total;
    }
}

/// Per-sample activations, reused across a batch.
struct Workspace {
    hidden1: Vec<f64>,
    hidden2: Vec<f64>,
    probs: [f64; NUM_CLASSES],
    delta2: Vec<f64>,
    delta1: Vec<f64>,
}

impl Workspace {
    fn new(config: &MlpConfig) -> Self {
        let [h1, h2] = config.hidden;
        Self {
            hidden1: vec![0.0; h1],
            hidden2: vec![0.0; h2],
            probs: [0.0; NUM_CLASSES],
            delta2: vec![0.0; h2],
            delta1: vec![0.0; h1],
        }
    }

    /// Fills `probs`; hidden buffers keep post-ReLU activations.
    fn forward(&mut self, layers: &[Dense; 3], params: &[f64], x: &[f64; NUM_FEATURES]) {
        layers[0].apply(params, x, &mut self.hidden1);
        relu(&mut self.hidden1);
        layers[1].apply(params, &self.hidden1, &mut self.hidden2);
        relu(&mut self.hidden2);
        layers[2].apply(params, &self.hidden2, &mut self.probs);
        softmax(&mut self.probs);
    }

    /// Adds `scale * d(-log p[label])/dparams` into `grad` and returns the
    /// sample's loss. Must follow `forward` on the same sample.
    fn backward(
        &mut self,
        layers: &[Dense; 3],
        params: &[f64],
        x: &[f64; NUM_FEATURES],
        label: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let loss = -self.probs[label].max(LOG_FLOOR).ln();
        let mut delta3 = self.probs;
        delta3[label] -= 1.0;
        for d in &mut delta3 {
            *d *= scale;
        }

        dense_grad(&layers[2], &self.hidden2, &delta3, grad);
        backprop(&layers[2], params, &delta3, &self.hidden2, &mut self.delta2);
        dense_grad(&layers[1], &self.hidden1, &self.delta2, grad);
        backprop(
            &layers[1],
            params,
            &self.delta2,
            &self.hidden1,
            &mut self.delta1,
        );
        dense_grad(&layers[0], x, &self.delta1, grad);
        loss
    }
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn dense_grad(layer: &Dense, input: &[f64], delta: &[f64], grad: &mut [f64]) {
    let gw = &mut grad[layer.weights..layer.weights + layer.fan_in * layer.fan_out];
    for (a, row) in input.iter().zip(gw.chunks_exact_mut(layer.fan_out)) {
        if *a == 0.0 {
            continue;
        }
        for (g, d) in row.iter_mut().zip(delta) {
            *g += a * d;
        }
    }
    for (g, d) in grad[layer.bias..layer.bias + layer.fan_out]
        .iter_mut()
        .zip(delta)
    {
        *g += d;
    }
}

/// `delta_in = (W delta_out) * relu'(activation)`.
fn backprop(
    layer: &Dense,
    params: &[f64],
    delta_out: &[f64],
    activation: &[f64],
    delta_in: &mut [f64],
) {
    let w = &params[layer.weights..layer.weights + layer.fan_in * layer.fan_out];
    for ((d, row), a) in delta_in
        .iter_mut()
        .zip(w.chunks_exact(layer.fan_out))
        .zip(activation)
    {
        *d = if *a > 0.0 {
            row.iter().zip(delta_out).map(|(w, g)| w * g).sum()
        } else {
            0.0
        };
    }
}

fn check_batch(features: &[[f64; NUM_FEATURES]], labels: &[usize]) -> Result<()> {
    if features.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(Error::Dimension(format!("label {bad} out of range")));
    }
    Ok(())
}

/// Class probabilities for each row.
pub fn forward(
    config: &MlpConfig,
    params: &ParamVector,
    features: &[[f64; NUM_FEATURES]],
) -> Result<Vec<[f64; NUM_CLASSES]>> {
    config.check(params)?;
    let layers = config.dense_layers();
    let mut ws = Workspace::new(config);
    Ok(features
        .iter()
        .map(|x| {
            ws.forward(&layers, params.values(), x);
            ws.probs
        })
        .collect())
}

/// Mean of `-ln p[label]`, with `p` floored at [`LOG_FLOOR`].
pub fn cross_entropy_loss(probs: &[[f64; NUM_CLASSES]], labels: &[usize]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if probs.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} probability rows but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &l)| -p[l].max(LOG_FLOOR).ln())
        .sum();
    Ok(total / probs.len() as f64)
}

/// Proximal penalty `(mu / 2) ||w - anchor||^2` pulling local weights
/// toward the broadcast model.
#[derive(Clone, Copy, Debug)]
pub struct Proximal<'a> {
    pub mu: f64,
    pub anchor: &'a ParamVector,
}

impl Proximal<'_> {
    /// Adds `mu (w - anchor)` to `grad`. A zero `mu` adds nothing.
    fn add_gradient(&self, params: &[f64], grad: &mut [f64]) {
        if self.mu == 0.0 {
            return;
        }
        for ((g, w), a) in grad.iter_mut().zip(params).zip(self.anchor.values()) {
            *g += self.mu * (w - a);
        }
    }
}

/// Gradient of the mean cross entropy over the batch, plus the proximal
/// gradient when one is given.
pub fn backward(
    config: &MlpConfig,
    params: &ParamVector,
    features: &[[f64; NUM_FEATURES]],
    labels: &[usize],
    proximal: Option<Proximal<'_>>,
) -> Result<ParamVector> {
    config.check(params)?;
    check_batch(features, labels)?;
    if features.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if let Some(p) = &proximal {
        params.check_shape(p.anchor)?;
        if !(p.mu >= 0.0) {
            return Err(Error::InvalidParameter(format!("proximal mu {} < 0", p.mu)));
        }
    }
    let layers = config.dense_layers();
    let mut ws = Workspace::new(config);
    let mut grad = params.zeros_like();
    let scale = 1.0 / features.len() as f64;
    for (x, &label) in features.iter().zip(labels) {
        ws.forward(&layers, params.values(), x);
        ws.backward(&layers, params.values(), x, label, scale, grad.values_mut());
    }
    if let Some(p) = proximal {
        p.add_gradient(params.values(), grad.values_mut());
    }
    Ok(grad)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.0008,
            momentum: 0.87,
            batch_size: 32,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || self.batch_size == 0 {
            return Err(Error::InvalidParameter(format!(
                "invalid optimizer settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// SGD-with-momentum state for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: SgdConfig,
    pub momentum_buffer: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: SgdConfig, num_params: usize) -> Self {
        Self {
            config,
            momentum_buffer: vec![0.0; num_params],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        let SgdConfig { lr, momentum, .. } = self.config;
        for ((w, b), g) in params.iter_mut().zip(&mut self.momentum_buffer).zip(grads) {
            *b = momentum * *b + g;
            *w -= lr * *b;
        }
    }
}

/// `buffer = momentum * buffer + grads; params -= lr * buffer`.
pub fn sgd_momentum_step(
    params: &mut ParamVector,
    grads: &ParamVector,
    state: &mut OptimizerState,
) -> Result<()> {
    params.check_shape(grads)?;
    if state.momentum_buffer.len() != params.len() {
        return Err(Error::Dimension(format!(
            "momentum buffer has {} entries for {} parameters",
            state.momentum_buffer.len(),
            params.len()
        )));
    }
    state.step(params.values_mut(), grads.values());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalTrainSpec {
    pub epochs: usize,
    /// Zero disables the proximal term.
    pub proximal_mu: f64,
}

impl Default for LocalTrainSpec {
    fn default() -> Self {
        Self {
            epochs: 3,
            proximal_mu: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalTrainOutcome {
    pub params: ParamVector,
    pub steps: usize,
}

/// Runs `spec.epochs` epochs of mini-batch SGD with momentum starting from
/// `global`, which also anchors the proximal term. Batches are reshuffled
/// every epoch and the trailing partial batch is kept. The momentum buffer
/// starts at zero.
pub fn local_train(
    config: &MlpConfig,
    global: &ParamVector,
    train: &Split,
    spec: &LocalTrainSpec,
    sgd: SgdConfig,
    rng: &mut SimRng,
) -> Result<LocalTrainOutcome> {
    config.check(global)?;
    check_batch(&train.features, &train.labels)?;
    sgd.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if spec.epochs < 1 {
        return Err(Error::InvalidParameter(
            "need at least one local epoch".into(),
        ));
    }
    if !(spec.proximal_mu >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "proximal mu {} < 0",
            spec.proximal_mu
        )));
    }

    let layers = config.dense_layers();
    let proximal = Proximal {
        mu: spec.proximal_mu,
        anchor: global,
    };
    let mut params = global.values().to_vec();
    let mut grad = vec![0.0; params.len()];
    let mut opt = OptimizerState::new(sgd, params.len());
    let mut ws = Workspace::new(config);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut steps = 0;

    for _ in 0..spec.epochs {
        order.shuffle(rng);
        for batch in order.chunks(sgd.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let x = &train.features[i];
                ws.forward(&layers, &params, x);
                ws.backward(&layers, &params, x, train.labels[i], scale, &mut grad);
            }
            proximal.add_gradient(&params, &mut grad);
            opt.step(&mut params, &grad);
            steps += 1;
        }
    }

    Ok(LocalTrainOutcome {
        params: ParamVector::new(params, config.shapes())?,
        steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(config: &MlpConfig, params: &ParamVector, split: &Split) -> Result<Evaluation> {
    config.check(params)?;
    check_batch(&split.features, &split.labels)?;
    if split.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let layers = config.dense_layers();
    let mut ws = Workspace::new(config);
    let mut correct = 0usize;
    let mut loss = 0.0;
    for (x, &label) in split.features.iter().zip(&split.labels) {
        ws.forward(&layers, params.values(), x);
        if argmax(&ws.probs) == label {
            correct += 1;
        }
        loss -= ws.probs[label].max(LOG_FLOOR).ln();
    }
    let n = split.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: loss / n,
    })
}
