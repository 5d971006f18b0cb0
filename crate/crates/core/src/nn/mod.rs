//! Feedforward ReLU network `x_k+1 = f(u_k, x_k)`.
//!
//! Inputs are `[q_h2, q_air, i, v_fc, p_h2]` in lpm, A, V and atm; outputs
//! are `[v_fc, p_h2]` one control interval later. A [`Scaler`] standardizes
//! both sides so the network itself works on unit-variance features, but
//! every public evaluation takes and returns physical units.

mod io;
mod train;

use std::ops::{Add, Mul, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Record;

pub use io::{load_weights, load_weights_with_architecture, save_weights, WeightsFile, WEIGHTS_FORMAT, WEIGHTS_VERSION};
pub use train::{train, EpochLoss, TrainConfig, TrainReport};

/// Layer widths of the controller model.
pub const ARCHITECTURE: [usize; 5] = [5, 16, 32, 8, 2];
pub const N_INPUTS: usize = 5;
pub const N_OUTPUTS: usize = 2;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("network configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("cannot load weights from {path}: {msg}")]
    Load { path: String, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Scalar type the forward pass is generic over: plain `f64` for
/// evaluation and training, dual numbers for linearization.
pub trait Real: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    fn constant(x: f64) -> Self;
    /// `max(0, x)`; the derivative at exactly zero is taken as 0.
    fn relu(self) -> Self;
    fn scale(self, k: f64) -> Self;
}

impl Real for f64 {
    fn constant(x: f64) -> Self {
        x
    }
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
}

/// Dense layer, `weights` row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.inputs + col]
    }

    pub fn weight_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        &mut self.weights[row * self.inputs + col]
    }

    fn apply<T: Real>(&self, x: &[T]) -> Vec<T> {
        (0..self.outputs)
            .map(|r| {
                let row = &self.weights[r * self.inputs..(r + 1) * self.inputs];
                row.iter().zip(x).fold(T::constant(self.bias[r]), |acc, (&w, &xi)| acc + xi.scale(w))
            })
            .collect()
    }
}

/// Hidden layers use ReLU, the output layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    pub layers: Vec<Layer>,
}

impl NetworkWeights {
    pub fn zeros(widths: &[usize]) -> Self {
        Self { layers: widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() }
    }

    /// He-uniform initialization, zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(widths);
        for layer in &mut net.layers {
            let limit = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        net
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        if let Some(last) = self.layers.last() {
            w.push(last.outputs);
        }
        w
    }

    pub fn n_inputs(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Check shape consistency against `expected` widths and finiteness.
    pub fn validate(&self, expected: &[usize]) -> Result<(), NnError> {
        if self.layers.len() + 1 != expected.len() {
            return Err(NnError::Config(format!(
                "expected {} layers, found {}",
                expected.len() - 1,
                self.layers.len()
            )));
        }
        for (i, (layer, w)) in self.layers.iter().zip(expected.windows(2)).enumerate() {
            if layer.inputs != w[0] || layer.outputs != w[1] {
                return Err(NnError::Config(format!(
                    "layer {i} has shape {}->{}, expected {}->{}",
                    layer.inputs, layer.outputs, w[0], w[1]
                )));
            }
            if layer.weights.len() != layer.inputs * layer.outputs || layer.bias.len() != layer.outputs {
                return Err(NnError::Config(format!("layer {i} parameter count does not match its shape")));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(NnError::Config(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Forward pass in scaled space.
    pub fn forward_scaled<T: Real>(&self, input: &[T]) -> Vec<T> {
        let last = self.layers.len() - 1;
        let mut a = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            a = layer.apply(&a);
            if i != last {
                a.iter_mut().for_each(|v| *v = v.relu());
            }
        }
        a
    }

    /// Which hidden units are active (`z > 0`) at a scaled input.
    pub fn activation_pattern(&self, input: &[f64]) -> Vec<bool> {
        let last = self.layers.len() - 1;
        let mut pattern = Vec::new();
        let mut a = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            a = layer.apply(&a);
            if i != last {
                pattern.extend(a.iter().map(|&z| z > 0.0));
                a.iter_mut().for_each(|v| *v = v.relu());
            }
        }
        pattern
    }
}

/// Per-feature affine standardization `scaled = (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_shift: Vec<f64>,
    pub output_scale: Vec<f64>,
}

impl Scaler {
    pub fn identity(n_in: usize, n_out: usize) -> Self {
        Self {
            input_shift: vec![0.0; n_in],
            input_scale: vec![1.0; n_in],
            output_shift: vec![0.0; n_out],
            output_scale: vec![1.0; n_out],
        }
    }

    /// Mean/standard-deviation fit on `records`. Constant features keep a
    /// unit scale.
    pub fn fit(records: &[Record]) -> Self {
        let inputs: Vec<[f64; 5]> = records.iter().map(Record::input).collect();
        let targets: Vec<[f64; 2]> = records.iter().map(|r| r.x_next).collect();
        let (input_shift, input_scale) = moments(&inputs);
        let (output_shift, output_scale) = moments(&targets);
        Self { input_shift, input_scale, output_shift, output_scale }
    }

    pub fn validate(&self, n_in: usize, n_out: usize) -> Result<(), NnError> {
        if self.input_shift.len() != n_in
            || self.input_scale.len() != n_in
            || self.output_shift.len() != n_out
            || self.output_scale.len() != n_out
        {
            return Err(NnError::Config(format!("scaler dimensions do not match {n_in}->{n_out}")));
        }
        let all = self.input_shift.iter().chain(&self.output_shift);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(NnError::Config("scaler shift is not finite".into()));
        }
        if self.input_scale.iter().chain(&self.output_scale).any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(NnError::Config("scaler scales must be positive".into()));
        }
        Ok(())
    }

    pub fn scale_input<T: Real>(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(self.input_shift.iter().zip(&self.input_scale))
            .map(|(&v, (&m, &s))| (v - T::constant(m)).scale(1.0 / s))
            .collect()
    }

    pub fn unscale_output<T: Real>(&self, y: &[T]) -> Vec<T> {
        y.iter()
            .zip(self.output_shift.iter().zip(&self.output_scale))
            .map(|(&v, (&m, &s))| v.scale(s) + T::constant(m))
            .collect()
    }

    pub fn scale_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.output_shift.iter().zip(&self.output_scale))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }
}

fn moments<const N: usize>(rows: &[[f64; N]]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; N];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; N];
    for r in rows {
        for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let std = std.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
    (mean, std)
}

/// Trained model: weights plus the scaler that maps physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub weights: NetworkWeights,
    pub scaler: Scaler,
}

impl Network {
    pub fn new(weights: NetworkWeights, scaler: Scaler) -> Result<Self, NnError> {
        scaler.validate(weights.n_inputs(), weights.n_outputs())?;
        Ok(Self { weights, scaler })
    }

    pub fn forward(&self, input: &[f64; N_INPUTS]) -> [f64; N_OUTPUTS] {
        let y = forward(&self.weights, &self.scaler, input);
        [y[0], y[1]]
    }
}

/// Scale, run the network, unscale.
pub fn forward<T: Real>(weights: &NetworkWeights, scaler: &Scaler, input: &[T]) -> Vec<T> {
    assert_eq!(input.len(), weights.n_inputs(), "input width does not match the network");
    let scaled = scaler.scale_input(input);
    scaler.unscale_output(&weights.forward_scaled(&scaled))
}

/// Mean squared error in scaled output space, averaged over records and
/// output dimensions.
pub fn loss(weights: &NetworkWeights, scaler: &Scaler, records: &[Record]) -> f64 {
    assert!(!records.is_empty(), "loss of an empty dataset");
    let k = weights.n_outputs() as f64;
    let total: f64 = records
        .iter()
        .map(|r| {
            let pred = weights.forward_scaled(&scaler.scale_input(&r.input()));
            let target = scaler.scale_output(&r.x_next);
            pred.iter().zip(&target).map(|(p, t)| (p - t).powi(2)).sum::<f64>()
        })
        .sum();
    total / (records.len() as f64 * k)
}

/// Reverse-mode gradient of [`loss`] over `batch`, laid out like the
/// weights.
pub fn backward(weights: &NetworkWeights, scaler: &Scaler, batch: &[Record]) -> NetworkWeights {
    assert!(!batch.is_empty(), "gradient of an empty batch");
    let mut grad = NetworkWeights::zeros(&weights.widths());
    let norm = 2.0 / (batch.len() as f64 * weights.n_outputs() as f64);
    let last = weights.layers.len() - 1;
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(weights.layers.len() + 1);
    for r in batch {
        acts.clear();
        acts.push(scaler.scale_input(&r.input()));
        for (i, layer) in weights.layers.iter().enumerate() {
            let mut z = layer.apply(acts.last().expect("input activation"));
            if i != last {
                z.iter_mut().for_each(|v| *v = v.relu());
            }
            acts.push(z);
        }
        let target = scaler.scale_output(&r.x_next);
        let mut delta: Vec<f64> = acts[last + 1].iter().zip(&target).map(|(p, t)| norm * (p - t)).collect();
        for i in (0..=last).rev() {
            let layer = &weights.layers[i];
            let input = &acts[i];
            let g = &mut grad.layers[i];
            for (row, &d) in delta.iter().enumerate() {
                g.bias[row] += d;
                let gw = &mut g.weights[row * layer.inputs..(row + 1) * layer.inputs];
                for (w, &a) in gw.iter_mut().zip(input) {
                    *w += d * a;
                }
            }
            if i > 0 {
                // `input` is the post-ReLU activation of the previous layer, so
                // `a > 0` is exactly the `z > 0` mask.
                delta = (0..layer.inputs)
                    .map(|col| {
                        if input[col] > 0.0 {
                            delta.iter().enumerate().map(|(row, d)| d * layer.weight(row, col)).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
    }
    grad
}
