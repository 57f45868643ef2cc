//! Mini-batch Adam training over any model satisfying the forecast
//! contract, with chronological validation, early stopping, and
//! best-validation checkpointing. Fully seeded: two runs with the same
//! config produce bit-identical loss histories.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{AnyModel, ModelParams};
use crate::pipeline::ForecastWindow;
use crate::tensor::Tensor;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state: first/second moment estimates per parameter plus the
/// step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        let mut m = ModelParams::new();
        let mut v = ModelParams::new();
        for (name, t) in params.iter() {
            m.insert(name.clone(), Tensor::zeros(t.shape()));
            v.insert(name.clone(), Tensor::zeros(t.shape()));
        }
        AdamState { config, step: 0, m, v }
    }
}

/// One Adam update with bias correction, in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::contract(format!("no gradient for parameter {name}")))?;
        if g.shape() != p.shape() {
            return Err(Error::dim(format!("gradient shape mismatch for {name}")));
        }
        let m = state.m.get_mut(name)?;
        let v = state.v.get_mut(name)?;
        for i in 0..p.len() {
            let gi = g.data()[i];
            let mi = beta1 * m.data()[i] + (1.0 - beta1) * gi;
            let vi = beta2 * v.data()[i] + (1.0 - beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            p.data_mut()[i] -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Training-loop settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tf_prob: f64,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    /// Chronological tail of the training windows held out for validation.
    pub val_frac: f64,
    pub checkpoint_path: Option<PathBuf>,
    /// Provenance hash of the training data, recorded in the checkpoint.
    pub data_hash: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 4,
            lr: 1e-4,
            tf_prob: 0.5,
            seed: 0,
            patience: None,
            val_frac: 0.1,
            checkpoint_path: None,
            data_hash: String::new(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("epochs and batch size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.tf_prob) {
            return Err(Error::contract("tf_prob must be in [0,1]"));
        }
        if !(0.0..1.0).contains(&self.val_frac) {
            return Err(Error::contract("val_frac must be in [0,1)"));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::contract("learning rate must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Loss trajectory and best-epoch bookkeeping produced by [`train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Deterministic mean squared error of the model's own forecasts over a
/// window set (normalized scale).
pub fn validation_loss(model: &AnyModel, windows: &[ForecastWindow]) -> Result<f64> {
    let mut total = 0.0;
    for w in windows {
        let pred = model.forecast(&w.input)?;
        let mut sq = 0.0;
        for (a, b) in pred.data().iter().zip(w.target.data()) {
            sq += (a - b) * (a - b);
        }
        total += sq / pred.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Minimize the forecast MSE over the windows. The chronological tail
/// (`val_frac`) is held out for validation; the checkpoint (when a path is
/// set) always holds the best-validation parameters.
pub fn train(model: &mut AnyModel, windows: &[ForecastWindow], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::contract("no training windows"));
    }
    if !model.kind().is_trainable() {
        return Err(Error::contract(format!("model {} is not trainable", model.kind())));
    }
    let n_val = ((windows.len() as f64) * config.val_frac).round() as usize;
    let n_val = n_val.min(windows.len() - 1);
    let (train_windows, val_windows) = windows.split_at(windows.len() - n_val);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig { lr: config.lr, ..AdamConfig::default() },
    );
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val: f64::INFINITY,
    };
    let mut stale_epochs = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_windows.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut batch_grads: BTreeMap<String, Tensor> = BTreeMap::new();
            for &wi in batch {
                let w = &train_windows[wi];
                let mut tape = Tape::new();
                let nodes = model.params().leaves(&mut tape);
                let loss = model.build_loss(
                    &mut tape,
                    &nodes,
                    &w.input,
                    &w.target,
                    config.tf_prob,
                    &mut rng,
                    true,
                )?;
                let loss_value = tape.value(loss).scalar_value()?;
                if !loss_value.is_finite() {
                    return Err(Error::Numerical(format!(
                        "loss diverged at epoch {epoch}, window {wi}"
                    )));
                }
                epoch_loss += loss_value;
                let grads = tape.backward(loss)?;
                let scale = 1.0 / batch.len() as f64;
                for (name, &node) in &nodes {
                    let g = grads.get(node).scale(scale);
                    match batch_grads.get_mut(name) {
                        Some(acc) => acc.add_assign(&g)?,
                        None => {
                            batch_grads.insert(name.clone(), g);
                        }
                    }
                }
            }
            adam_step(model.params_mut(), &batch_grads, &mut adam)?;
        }
        report.train_loss.push(epoch_loss / train_windows.len() as f64);

        let val = if val_windows.is_empty() {
            *report.train_loss.last().expect("pushed above")
        } else {
            validation_loss(model, val_windows)?
        };
        report.val_loss.push(val);
        if val < report.best_val {
            report.best_val = val;
            report.best_epoch = epoch;
            stale_epochs = 0;
            if let Some(path) = &config.checkpoint_path {
                Checkpoint {
                    config: model.config(),
                    data_hash: config.data_hash.clone(),
                    epoch: epoch as u64,
                    val_loss: val,
                    params: model.params().clone(),
                    buffers: model.buffers(),
                    adam: Some(adam.clone()),
                }
                .save(path)?;
            }
        } else {
            stale_epochs += 1;
            if let Some(patience) = config.patience {
                if stale_epochs > patience {
                    break;
                }
            }
        }
    }
    Ok(report)
}
