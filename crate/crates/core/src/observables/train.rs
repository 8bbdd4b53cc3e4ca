//! AdamW and the dictionary training loop.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{Matrix, SeededRng};

use super::networks::LossWeights;
use super::FeatureMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Fit per-coordinate mean/std standardisation of the inputs before
    /// training.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 1e-2,
            batch_size: None,
            weight_decay: 0.01,
            seed: 0,
            loss_weights: LossWeights::default(),
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWState {
    pub fn new(n_params: usize) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One AdamW update with bias-corrected moments and decoupled decay:
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p`.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamWState, config: &TrainConfig) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return dim_err(format!(
            "AdamW on {n} parameters with {} gradients and {} moments",
            grads.len(),
            state.first_moment.len()
        ));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let wd = config.weight_decay;
    for i in 0..n {
        let g = grads[i];
        let m = b1 * state.first_moment[i] + (1.0 - b1) * g;
        let v = b2 * state.second_moment[i] + (1.0 - b2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let m_hat = m / c1;
        let v_hat = v / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps) + lr * wd * params[i];
    }
    Ok(())
}

/// Trains a learnable map on consecutive pairs `(x(n), x(n+1))` of
/// `states` (one row per sample). Returns the mean batch loss of every
/// epoch, measured before each step.
pub fn train_dictionary(map: &mut FeatureMap, states: &Matrix, config: &TrainConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let codec = match map {
        FeatureMap::Mlp(m) => &mut m.codec,
        FeatureMap::Cnn(c) => &mut c.codec,
        other => {
            return Err(Error::InvalidArgument(format!(
                "{} dictionaries are not trainable",
                other.kind().as_str()
            )))
        }
    };
    if states.rows() < 2 {
        return Err(Error::InvalidArgument("training needs at least two states".into()));
    }
    if states.cols() != codec.net.input_len() {
        return dim_err(format!(
            "training states have {} columns, network input is {}",
            states.cols(),
            codec.net.input_len()
        ));
    }
    if config.standardize {
        codec.fit_standardizer(states);
    }
    let n = states.rows() - 1;
    let inputs = states.row_range(0, n);
    let targets = states.row_range(1, n + 1);
    let batch = config.batch_size.unwrap_or(n).min(n);
    let mut rng = SeededRng::new(config.seed);
    let mut opt = AdamWState::new(codec.params.len());
    let mut params = std::mem::take(&mut codec.params);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order: Vec<usize> = if batch == n { (0..n).collect() } else { rng.permutation(n) };
        let mut total = 0.0;
        let mut count = 0;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let (loss, grad) = if batch == n {
                codec.loss_and_grad(&params, &inputs, &targets, config.loss_weights)?
            } else {
                let xb = Matrix::from_rows(&chunk.iter().map(|&i| inputs.row(i)).collect::<Vec<_>>())?;
                let tb = Matrix::from_rows(&chunk.iter().map(|&i| targets.row(i)).collect::<Vec<_>>())?;
                codec.loss_and_grad(&params, &xb, &tb, config.loss_weights)?
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                codec.params = params;
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adamw_step(&mut params, &grad, &mut opt, config)?;
            total += loss;
            count += 1;
        }
        history.push(total / count as f64);
    }
    codec.params = params;
    Ok(history)
}
