//! Minibatch Adam training with global-norm clipping and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::{backward_batch, check_lengths, chunks_of, loss_mse, reconstruct_batch, Gradients};
use super::{Architecture, ModelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            clip_norm: 5.0,
            seed: 0,
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm", "must be positive"));
        }
        self.architecture
            .validate()
            .map_err(|e| Error::config("architecture", e.to_string()))
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in &mut grads.values {
            *g *= scale;
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: ModelParams,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Mean reconstruction loss over `segs`.
pub fn mean_loss(model: &ModelParams, segs: &[&[f64]]) -> Result<f64> {
    let recon = reconstruct_batch(model, segs)?;
    let mut total = 0.0;
    for (r, s) in recon.iter().zip(segs) {
        total += loss_mse(r, s)?;
    }
    Ok(total / segs.len().max(1) as f64)
}

pub fn train(train_set: &[&[f64]], val_set: &[&[f64]], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(train_set, val_set, cfg, |_| {})
}

/// Trains from a seeded initialization; `progress` is called after every epoch.
///
/// Sequences are cut into model-length chunks and minibatches are drawn from
/// the shuffled chunks.
pub fn train_with_progress(
    train_set: &[&[f64]],
    val_set: &[&[f64]],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::InsufficientData("validation set is empty".into()));
    }
    let mut model = ModelParams::init(cfg.architecture.clone(), cfg.seed)?;
    check_lengths(&model, train_set)?;
    check_lengths(&model, val_set)?;
    let train_chunks = chunks_of(&model, train_set);
    let mut opt = Adam::new(model.n_params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_chunks.len()).collect();
    let mut shuffler = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_0bde);

    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.clone());
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffler);
        let mut loss_sum = 0.0;
        for (bi, batch_idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&[f64]> = batch_idx.iter().map(|&i| train_chunks[i]).collect();
            let (losses, mut grads) = backward_batch(&model, &batch)?;
            let batch_loss: f64 = losses.iter().sum();
            if !batch_loss.is_finite() || grads.values.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            clip_global_norm(&mut grads, cfg.clip_norm);
            opt.step(model.values_mut(), &grads.values);
        }
        let train_loss = loss_sum / train_chunks.len() as f64;
        let val_loss = mean_loss(&model, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                loss: val_loss,
            });
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
        };
        progress(&stats);
        history.push(stats);
        if val_loss < best.0 {
            best = (val_loss, epoch, model.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best.2,
        history,
        best_epoch: best.1,
    })
}
