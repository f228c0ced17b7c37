//! Plain mini-batch SGD.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::dataset::Dataset;
use crate::model::Network;
use crate::nn::{gradient, EvalError, LossKind};
use crate::params::ModelParameters;
use crate::sampling::{rng_for, shuffle, TRAIN_SHUFFLE_STREAM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged in epoch {epoch}: loss became {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ModelParameters,
    /// Sample-weighted mean mini-batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainConfig {
    pub fn validate(&self, dataset_size: usize) -> Result<(), TrainError> {
        if dataset_size == 0 {
            return Err(TrainError::Config("dataset is empty".into()));
        }
        if self.batch_size == 0 || self.batch_size > dataset_size {
            return Err(TrainError::Config(format!(
                "batch_size {} must lie in 1..={dataset_size}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Trains from `init` with a fresh seeded shuffle each epoch.
///
/// The final short batch of an epoch is kept. A non-finite batch loss aborts
/// with [`TrainError::Diverged`] naming the (zero-based) epoch.
pub fn train_sgd(
    network: &Network,
    init: &ModelParameters,
    dataset: &Dataset,
    loss_kind: LossKind,
    config: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    config.validate(dataset.size())?;
    init.check(network).map_err(EvalError::from)?;
    let mut params = init.clone();
    let mut rng = rng_for(config.seed, TRAIN_SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..dataset.size()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        shuffle(&mut order, &mut rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = dataset.select(chunk);
            let (loss, grad) = gradient(network, &params, batch.inputs(), batch.targets(), loss_kind)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, loss });
            }
            weighted += loss * chunk.len() as f64;
            params.add_scaled(&grad, -config.learning_rate);
        }
        let mean = weighted / dataset.size() as f64;
        debug!(epoch, loss = mean, "epoch done");
        epoch_losses.push(mean);
    }
    if !params.all_finite() {
        return Err(TrainError::Diverged {
            epoch: config.epochs.saturating_sub(1),
            loss: f64::NAN,
        });
    }
    Ok(TrainReport {
        params,
        epoch_losses,
    })
}
