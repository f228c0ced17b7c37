//! End-to-end landscape computation: weights, directions, grid, experiment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, DatasetSpec};
use crate::directions::{filter_normalize, sample_directions, DirectionError, DirectionPair};
use crate::experiment::{push_warning, Experiment};
use crate::grid::{evaluate_grid, loss_at, subsample_indices, EvalConfig, GridError, GridProblem, GridSpec, ProgressSink};
use crate::model::{ModelError, Network};
use crate::nn::{model_loss, EvalError};
use crate::params::ModelParameters;
use crate::train::{train_sgd, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Direction(#[from] DirectionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Invalid(String),
}

/// Where the minimizer comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum WeightsSource {
    /// He-initialized parameters, untrained.
    Init { seed: u64 },
    /// He init from `config.seed`, then SGD on the dataset.
    Train { config: TrainConfig },
    /// Parameters supplied by the caller.
    Given { params: ModelParameters },
}

/// A complete, reproducible description of one landscape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeRequest {
    /// Experiment id for the result. Required by [`LandscapeRequest::prepare`];
    /// callers that assign ids themselves may leave it empty on input.
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub name: Option<String>,
    /// Model in the text format of [`crate::model`].
    pub model: String,
    pub weights: WeightsSource,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub eval: EvalConfig,
    pub direction_seed: u64,
}

/// A request that passed validation, with its model and data materialized.
pub struct Prepared {
    pub request: LandscapeRequest,
    pub network: Network,
    pub dataset: Dataset,
}

pub struct LandscapeOutcome {
    pub experiment: Experiment,
    pub theta: ModelParameters,
    pub directions: DirectionPair,
    pub train_losses: Vec<f64>,
    /// Loss of the minimizer on the evaluation subset.
    pub center_loss: f64,
}

impl LandscapeRequest {
    /// Checks everything that can fail before training or evaluation starts.
    pub fn prepare(self) -> Result<Prepared, PipelineError> {
        if self.id.is_empty() {
            return Err(PipelineError::Invalid("experiment id must be nonempty".into()));
        }
        let network: Network = self.model.parse()?;
        self.grid.validate()?;
        let raw = self.dataset.generate()?;
        let dataset = if raw.sample_shape() == network.input_shape() {
            raw
        } else {
            let have: usize = raw.sample_shape().iter().product();
            let want: usize = network.input_shape().iter().product();
            if have != want {
                return Err(PipelineError::Invalid(format!(
                    "dataset samples have shape {:?}, model input is {:?}",
                    raw.sample_shape(),
                    network.input_shape()
                )));
            }
            raw.with_sample_shape(network.input_shape())?
        };
        subsample_indices(dataset.size(), &self.eval)?;
        let probe_params = match &self.weights {
            WeightsSource::Init { .. } => ModelParameters::zeros(&network),
            WeightsSource::Train { config } => {
                config.validate(dataset.size())?;
                ModelParameters::zeros(&network)
            }
            WeightsSource::Given { params } => {
                params.check(&network)?;
                params.clone()
            }
        };
        // catches target/output mismatches (e.g. class index beyond the outputs)
        model_loss(&network, &probe_params, dataset.inputs(), dataset.targets(), self.eval.loss_kind)?;
        Ok(Prepared {
            request: self,
            network,
            dataset,
        })
    }
}

impl Prepared {
    pub fn total_points(&self) -> usize {
        self.request.grid.points()
    }

    /// Trains (if requested), samples and normalizes directions, evaluates
    /// the grid, and packages the result with its full configuration.
    pub fn run(&self, workers: usize, progress: &dyn ProgressSink) -> Result<LandscapeOutcome, PipelineError> {
        let req = &self.request;
        let (theta, train_losses) = match &req.weights {
            WeightsSource::Init { seed } => (ModelParameters::init_he(&self.network, *seed), Vec::new()),
            WeightsSource::Train { config } => {
                let init = ModelParameters::init_he(&self.network, config.seed);
                let report = train_sgd(&self.network, &init, &self.dataset, req.eval.loss_kind, config)?;
                (report.params, report.epoch_losses)
            }
            WeightsSource::Given { params } => (params.clone(), Vec::new()),
        };
        let directions = filter_normalize(&sample_directions(&theta, req.direction_seed), &theta)?;
        let problem = GridProblem {
            network: &self.network,
            theta: &theta,
            directions: &directions,
            dataset: &self.dataset,
            grid: &req.grid,
            eval: &req.eval,
        };
        let grid = evaluate_grid(&problem, workers, progress)?;
        let subset = self.dataset.select(&subsample_indices(self.dataset.size(), &req.eval)?);
        let center_loss = loss_at(&self.network, &theta, &directions, &subset, req.eval.loss_kind, 0.0, 0.0)?;

        let mut experiment = Experiment::new(req.id.clone(), grid)
            .with_name(req.name.clone().unwrap_or_else(|| req.id.clone()))
            .with_meta("model", self.network.describe())
            .with_meta("param_count", self.network.param_count())
            .with_meta("loss_kind", req.eval.loss_kind)
            .with_meta("dataset", req.dataset)
            .with_meta("grid", req.grid)
            .with_meta("subsample", req.eval.subsample)
            .with_meta("subsample_seed", req.eval.subsample_seed)
            .with_meta("subsample_strategy", "seeded random subset, fixed for all grid points")
            .with_meta("direction_seed", req.direction_seed)
            .with_meta("direction_normalization", "filter")
            .with_meta("center_loss", crate::csvio::format_float(center_loss));
        match &req.weights {
            WeightsSource::Init { seed } => {
                experiment = experiment.with_meta("weights", format!("he-init seed {seed}"));
            }
            WeightsSource::Train { config } => {
                experiment = experiment
                    .with_meta("weights", "sgd")
                    .with_meta("train_seed", config.seed)
                    .with_meta("train_batch_size", config.batch_size)
                    .with_meta("train_learning_rate", config.learning_rate)
                    .with_meta("train_epochs", config.epochs);
                if let Some(last) = train_losses.last() {
                    experiment = experiment.with_meta("train_final_loss", crate::csvio::format_float(*last));
                }
            }
            WeightsSource::Given { .. } => {
                experiment = experiment.with_meta("weights", "given");
            }
        }
        for w in &directions.warnings {
            push_warning(&mut experiment.metadata, w);
        }
        Ok(LandscapeOutcome {
            experiment,
            theta,
            directions,
            train_losses,
            center_loss,
        })
    }
}
