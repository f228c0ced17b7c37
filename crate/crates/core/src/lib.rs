//! Loss-landscape slices of small neural networks.
//!
//! The crate covers the whole numeric path: a minimal network substrate
//! ([`model`], [`nn`], [`train`]), seeded Gaussian directions with per-filter
//! normalization ([`directions`]), parallel evaluation of a 2D grid slice
//! around a minimizer ([`grid`]), and the data side: the `id,x,y,loss` CSV
//! format ([`csvio`]), clipping and statistics ([`analysis`]), and an on-disk
//! experiment store ([`store`]).

pub mod analysis;
pub mod csvio;
pub mod dataset;
pub mod directions;
pub mod experiment;
pub mod grid;
pub mod model;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod sampling;
pub mod store;
pub mod tensor;
pub mod train;

pub use analysis::{clip_radius, contour_levels, mean_abs_laplacian, summary_stats, ClipSpec, SummaryStats};
pub use csvio::{export_csv, parse_csv, CsvError};
pub use dataset::{synth_dataset, Dataset, DatasetKind, DatasetSpec, Targets};
pub use directions::{filter_normalize, sample_directions, DirectionPair};
pub use experiment::Experiment;
pub use grid::{evaluate_grid, subsample_indices, EvalConfig, GridProblem, GridSpec, LandscapeGrid, Subsample};
pub use model::{LayerSpec, Network};
pub use nn::{forward, gradient, loss, model_loss, LossKind};
pub use params::ModelParameters;
pub use pipeline::{LandscapeRequest, WeightsSource};
pub use store::ExperimentStore;
pub use tensor::Tensor;
pub use train::{train_sgd, TrainConfig};
