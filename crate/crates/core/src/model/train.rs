//! Minibatch training with Adam and per-epoch history.
//!
//! Single-threaded by contract: the same seed, data, and configuration
//! produce bitwise-identical parameters.

use ndarray::NdFloat;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::net::{self, Batch, Dataset};
use crate::model::params::{Gradients, ModelParams};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout: 0.3,
            bn_momentum: 0.99,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be positive".into()));
        }
        if self.learning_rate <= 0.0 || self.beta1 <= 0.0 || self.beta2 <= 0.0 || self.epsilon <= 0.0
        {
            return Err(Error::InvalidConfig("optimizer constants must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidConfig("bn momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Adam with bias-corrected moment estimates; skips non-trainable tensors.
pub struct Adam<F> {
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: usize,
}

impl<F: NdFloat> Adam<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        Self {
            m: params.tensors.iter().map(|t| vec![F::zero(); t.len()]).collect(),
            v: params.tensors.iter().map(|t| vec![F::zero(); t.len()]).collect(),
            step: 0,
        }
    }

    pub fn apply(&mut self, params: &mut ModelParams<F>, grads: &Gradients<F>, cfg: &TrainConfig) {
        self.step += 1;
        let lr = F::from(cfg.learning_rate).expect("lr");
        let b1 = F::from(cfg.beta1).expect("beta1");
        let b2 = F::from(cfg.beta2).expect("beta2");
        let eps = F::from(cfg.epsilon).expect("eps");
        let one = F::one();
        let bc1 = one - b1.powi(self.step as i32);
        let bc2 = one - b2.powi(self.step as i32);
        for (ti, tensor) in params.tensors.iter_mut().enumerate() {
            if !tensor.trainable {
                continue;
            }
            let g = &grads[ti].data;
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            for i in 0..tensor.data.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor.data[i] = tensor.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Inference-mode accuracy over a dataset, evaluated in chunks.
pub fn evaluate<F: NdFloat>(
    params: &ModelParams<F>,
    data: &Dataset<F>,
    batch_size: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("empty evaluation set".into()));
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.gather(chunk);
        let probs = net::forward_infer(params, &batch)?;
        for (row, &label) in probs.rows().into_iter().zip(&batch.labels) {
            if net::argmax_class(row) == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Epoch loop: seeded shuffling, Adam updates, running-statistics updates,
/// and per-epoch train/validation bookkeeping.
pub fn train<F: NdFloat>(
    params: &mut ModelParams<F>,
    train_data: &Dataset<F>,
    val_data: &Dataset<F>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::EmptyInput("empty training set".into()));
    }
    let mut shuffle_rng = rng::stream(cfg.seed, "shuffle", 0);
    let mut dropout_rng = rng::stream(cfg.seed, "dropout", 0);
    let mut adam = Adam::new(params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Batch<F> = train_data.gather(chunk);
            let (loss, probs, grads) = net::loss_and_gradients(
                params,
                &batch,
                cfg.dropout,
                cfg.bn_momentum,
                true,
                &mut dropout_rng,
            )?;
            loss_sum += loss.to_f64().expect("loss fits f64") * chunk.len() as f64;
            for (row, &label) in probs.rows().into_iter().zip(&batch.labels) {
                if net::argmax_class(row) == label {
                    correct += 1;
                }
            }
            adam.apply(params, &grads, cfg);
        }
        let val_accuracy = if val_data.is_empty() {
            f64::NAN
        } else {
            evaluate(params, val_data, cfg.batch_size)?
        };
        history.push(EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / train_data.len() as f64,
            train_accuracy: correct as f64 / train_data.len() as f64,
            val_accuracy,
        });
    }
    Ok(history)
}

/// Renders history as a fixed-width text table.
pub fn history_table(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch\ttrain_loss\ttrain_acc\tval_acc\n");
    for row in history {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.4}\t{:.4}\n",
            row.epoch, row.train_loss, row.train_accuracy, row.val_accuracy
        ));
    }
    out
}
