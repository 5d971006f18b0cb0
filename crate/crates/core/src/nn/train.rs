use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, loss, Network, NetworkWeights, NnError, Scaler, ARCHITECTURE};
use crate::datagen::{self, Record};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub val_fraction: f64,
    pub architecture: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 7,
            patience: 50,
            val_fraction: 0.1,
            architecture: ARCHITECTURE.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NnError::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::Config(format!("learning_rate = {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(NnError::Config("Adam betas must lie in [0, 1) and epsilon be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(NnError::Config(format!("val_fraction = {}", self.val_fraction)));
        }
        if self.architecture.len() < 2 || self.architecture.contains(&0) {
            return Err(NnError::Config(format!("architecture {:?}", self.architecture)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub train_records: usize,
    pub val_records: usize,
}

struct Adam {
    m: NetworkWeights,
    v: NetworkWeights,
    t: i32,
}

impl Adam {
    fn new(widths: &[usize]) -> Self {
        Self { m: NetworkWeights::zeros(widths), v: NetworkWeights::zeros(widths), t: 0 }
    }

    fn step(&mut self, params: &mut NetworkWeights, grad: &NetworkWeights, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let layers = params.layers.iter_mut().zip(&grad.layers).zip(self.m.layers.iter_mut().zip(&mut self.v.layers));
        for ((p, g), (m, v)) in layers {
            let p_iter = p.weights.iter_mut().chain(p.bias.iter_mut());
            let g_iter = g.weights.iter().chain(&g.bias);
            let m_iter = m.weights.iter_mut().chain(m.bias.iter_mut());
            let v_iter = v.weights.iter_mut().chain(v.bias.iter_mut());
            for (((p, g), m), v) in p_iter.zip(g_iter).zip(m_iter).zip(v_iter) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Fit a network with Adam over shuffled minibatches.
///
/// The records are split into train/validation by a seeded shuffle, the
/// scaler is fit on the training part only, and the weights with the best
/// validation loss are returned.
pub fn train(records: &[Record], config: &TrainConfig) -> Result<(Network, TrainReport), NnError> {
    config.validate()?;
    if records.len() < 10 {
        return Err(NnError::Config(format!("need at least 10 records, got {}", records.len())));
    }
    let widths = &config.architecture;
    if widths[0] != 5 || *widths.last().expect("non-empty") != 2 {
        return Err(NnError::Config(format!("architecture {widths:?} must map 5 inputs to 2 outputs")));
    }
    let (train_set, val_set) = datagen::split(records, config.val_fraction, config.seed);
    let val_set = if val_set.is_empty() { train_set.clone() } else { val_set };
    let scaler = Scaler::fit(&train_set);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = NetworkWeights::he_uniform(widths, &mut rng);
    let mut adam = Adam::new(widths);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);

    let mut best = (weights.clone(), loss(&weights, &scaler, &val_set), 0usize);
    let mut history = Vec::with_capacity(config.epochs);
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i]));
            let grad = backward(&weights, &scaler, &batch);
            adam.step(&mut weights, &grad, config);
        }
        let train_loss = loss(&weights, &scaler, &train_set);
        let val_loss = loss(&weights, &scaler, &val_set);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(NnError::Diverged { epoch, loss: if train_loss.is_finite() { val_loss } else { train_loss } });
        }
        history.push(EpochLoss { epoch, train: train_loss, val: val_loss });
        if val_loss < best.1 {
            best = (weights.clone(), val_loss, epoch);
        } else if epoch - best.2 >= config.patience {
            stopped_early = true;
            break;
        }
    }
    let report = TrainReport {
        history,
        best_epoch: best.2,
        best_val_loss: best.1,
        stopped_early,
        train_records: train_set.len(),
        val_records: val_set.len(),
    };
    Ok((Network::new(best.0, scaler)?, report))
}
