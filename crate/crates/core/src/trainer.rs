//! Gradient-descent training loop with step-decay scheduling and early
//! stopping.
//!
//! The trainable parameters are the prediction tensor itself: the forward
//! pass is the identity, so each epoch is loss, gradient, update,
//! validation, schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridTensor;
use crate::loss::{accumulate_gradient, loss, LossWeights, TargetTensor};

/// Minimum decrease of validation loss that counts as an improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub total_epochs: usize,
    pub patience: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            total_epochs: 500,
            patience: 20,
            lr_decay_factor: 1.0,
            lr_decay_every: 1,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!(
                "lr_decay_factor must be in (0, 1], got {}",
                self.lr_decay_factor
            ));
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience must be positive".into());
        }
        if self.total_epochs > 0 && self.patience > self.total_epochs {
            return bad(format!(
                "patience {} exceeds total_epochs {}",
                self.patience, self.total_epochs
            ));
        }
        LossWeights::new(self.weights.lambda_coord, self.weights.lambda_noobj)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate_used: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: GridTensor,
    pub records: Vec<TrainRecord>,
    pub best_epoch: Option<usize>,
    /// True when training ended because of early stopping.
    pub stopped_early: bool,
}

/// `params - eta * grads`, elementwise.
pub fn sgd_step(params: &[f64], grads: &[f64], eta: f64) -> Result<Vec<f64>> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    Ok(params.iter().zip(grads).map(|(p, g)| p - eta * g).collect())
}

/// Step decay: `lr * factor^floor(epoch / every)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let steps = (epoch / cfg.lr_decay_every.max(1)) as i32;
    cfg.learning_rate * cfg.lr_decay_factor.powi(steps)
}

/// Tracks validation improvement and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    /// Records one epoch's validation loss. Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best - IMPROVEMENT_EPS || self.best_epoch.is_none() {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

/// Seeded uniform initialization in `[0, 1)`.
pub fn init_params(shape: crate::geometry::GridShape, seed: u64) -> GridTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..shape.len()).map(|_| rng.gen::<f64>()).collect();
    GridTensor::from_raw(shape, values).expect("length matches shape")
}

fn mean_loss(params: &GridTensor, set: &[TargetTensor], w: &LossWeights) -> Result<f64> {
    let mut sum = 0.0;
    for t in set {
        sum += loss(params, t, w)?.total;
    }
    Ok(sum / set.len() as f64)
}

/// Trains from seeded random parameters.
pub fn train(
    train_set: &[TargetTensor],
    val_set: &[TargetTensor],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let shape = train_set
        .first()
        .ok_or_else(|| Error::InvalidArgument("training set is empty".into()))?
        .shape();
    train_from(init_params(shape, cfg.seed), train_set, val_set, cfg)
}

/// Trains starting from `init`.
///
/// Each epoch evaluates the mean training loss at the current parameters,
/// applies one step along the mean gradient, then evaluates the mean
/// validation loss at the updated parameters.
pub fn train_from(
    init: GridTensor,
    train_set: &[TargetTensor],
    val_set: &[TargetTensor],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let shape = init.shape();
    if let Some(t) = train_set.iter().chain(val_set).find(|t| t.shape() != shape) {
        return Err(Error::Shape(format!(
            "target {:?} does not match parameters {:?}",
            t.shape(),
            shape
        )));
    }

    let mut params = init;
    let mut best = params.clone();
    let mut records = Vec::new();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut stopped_early = false;
    let inv_n = 1.0 / train_set.len() as f64;

    for epoch in 0..cfg.total_epochs {
        let lr = lr_at(epoch, cfg);
        let train_loss = mean_loss(&params, train_set, &cfg.weights)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                quantity: "training loss",
            });
        }
        let mut grad = vec![0.0; shape.len()];
        for t in train_set {
            accumulate_gradient(&params, t, &cfg.weights, inv_n, &mut grad)?;
        }
        let next = sgd_step(params.values(), &grad, lr)?;
        params = GridTensor::from_raw(shape, next)?;

        let val_loss = mean_loss(&params, val_set, &cfg.weights)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                quantity: "validation loss",
            });
        }
        records.push(TrainRecord {
            epoch,
            train_loss,
            val_loss,
            learning_rate_used: lr,
        });
        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best = params.clone();
        }
        if stop {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        params: best,
        records,
        best_epoch: stopper.best_epoch(),
        stopped_early,
    })
}
