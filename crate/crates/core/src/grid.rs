//! Grid specs, subsampling, and parallel evaluation of a 2D loss slice.

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::directions::DirectionPair;
use crate::model::{ModelError, Network};
use crate::nn::{model_loss, EvalError, LossKind};
use crate::params::ModelParameters;
use crate::sampling::{permutation, rng_for, SUBSAMPLE_STREAM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Spec(String),
    #[error("subsample of {requested} exceeds dataset size {size}")]
    SubsampleTooLarge { requested: usize, size: usize },
    #[error("subsample must be at least 1")]
    EmptySubsample,
    #[error("direction shapes do not match the reference parameters")]
    DirectionShape,
    #[error("invalid landscape grid: {0}")]
    Grid(String),
    #[error("could not start worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<ModelError> for GridError {
    fn from(e: ModelError) -> Self {
        GridError::Eval(e.into())
    }
}

/// Axis ranges and resolutions; grid points are uniform and include both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution_x: usize,
    pub resolution_y: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_min: -1.0,
            x_max: 1.0,
            y_min: -1.0,
            y_max: 1.0,
            resolution_x: 60,
            resolution_y: 60,
        }
    }
}

impl GridSpec {
    pub fn square(lo: f64, hi: f64, resolution: usize) -> Self {
        Self {
            x_min: lo,
            x_max: hi,
            y_min: lo,
            y_max: hi,
            resolution_x: resolution,
            resolution_y: resolution,
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        for (axis, lo, hi, n) in [
            ("x", self.x_min, self.x_max, self.resolution_x),
            ("y", self.y_min, self.y_max, self.resolution_y),
        ] {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(GridError::Spec(format!("{axis} range must be finite")));
            }
            if n == 0 {
                return Err(GridError::Spec(format!("{axis} resolution must be at least 1")));
            }
            if n > 1 {
                if lo >= hi {
                    return Err(GridError::Spec(format!(
                        "{axis}_min must be below {axis}_max when resolution > 1"
                    )));
                }
                if !strictly_increasing(&linspace(lo, hi, n)) {
                    return Err(GridError::Spec(format!(
                        "{axis} range too narrow for {n} distinct points"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn x_values(&self) -> Vec<f64> {
        linspace(self.x_min, self.x_max, self.resolution_x)
    }

    pub fn y_values(&self) -> Vec<f64> {
        linspace(self.y_min, self.y_max, self.resolution_y)
    }

    pub fn points(&self) -> usize {
        self.resolution_x * self.resolution_y
    }
}

/// `n` points from `lo` to `hi` inclusive; a single point sits at the midpoint.
/// Negative zero is normalized to `0.0`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = match n {
        0 => Vec::new(),
        1 => vec![lo + (hi - lo) / 2.0],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    };
    for x in &mut v {
        if *x == 0.0 {
            *x = 0.0;
        }
    }
    v
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}:{}:{}",
            self.x_min, self.x_max, self.y_min, self.y_max, self.resolution_x, self.resolution_y
        )
    }
}

impl FromStr for GridSpec {
    type Err = GridError;

    /// `xmin:xmax:ymin:ymax:resx:resy`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(GridError::Spec(format!(
                "`{s}`: expected xmin:xmax:ymin:ymax:resx:resy"
            )));
        }
        let num = |i: usize| {
            parts[i]
                .parse::<f64>()
                .map_err(|_| GridError::Spec(format!("`{}` is not a number", parts[i])))
        };
        let count = |i: usize| {
            parts[i]
                .parse::<usize>()
                .map_err(|_| GridError::Spec(format!("`{}` is not a count", parts[i])))
        };
        let spec = GridSpec {
            x_min: num(0)?,
            x_max: num(1)?,
            y_min: num(2)?,
            y_max: num(3)?,
            resolution_x: count(4)?,
            resolution_y: count(5)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// How many evaluation examples each grid point uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SubsampleRepr", into = "SubsampleRepr")]
pub enum Subsample {
    Full,
    Count(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SubsampleRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<SubsampleRepr> for Subsample {
    type Error = String;

    fn try_from(r: SubsampleRepr) -> Result<Self, Self::Error> {
        match r {
            SubsampleRepr::Count(n) => Ok(Subsample::Count(n)),
            SubsampleRepr::Word(w) => w.parse(),
        }
    }
}

impl From<Subsample> for SubsampleRepr {
    fn from(s: Subsample) -> Self {
        match s {
            Subsample::Full => SubsampleRepr::Word("full".into()),
            Subsample::Count(n) => SubsampleRepr::Count(n),
        }
    }
}

impl fmt::Display for Subsample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subsample::Full => f.write_str("full"),
            Subsample::Count(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Subsample {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "full" {
            return Ok(Subsample::Full);
        }
        s.parse()
            .map(Subsample::Count)
            .map_err(|_| format!("subsample must be a count or `full`, got `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub subsample: Subsample,
    pub subsample_seed: u64,
    pub loss_kind: LossKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            subsample: Subsample::Count(100),
            subsample_seed: 0,
            loss_kind: LossKind::CrossEntropy,
        }
    }
}

/// Indices of the evaluation subset.
///
/// `Count(n)` is the length-`n` prefix of a seeded permutation of
/// `0..dataset_size` (see [`crate::sampling`], stream [`SUBSAMPLE_STREAM`]);
/// `Full` is `0..dataset_size` in order.
pub fn subsample_indices(dataset_size: usize, cfg: &EvalConfig) -> Result<Vec<usize>, GridError> {
    match cfg.subsample {
        Subsample::Full => Ok((0..dataset_size).collect()),
        Subsample::Count(0) => Err(GridError::EmptySubsample),
        Subsample::Count(n) if n > dataset_size => Err(GridError::SubsampleTooLarge {
            requested: n,
            size: dataset_size,
        }),
        Subsample::Count(n) => {
            let mut rng = rng_for(cfg.subsample_seed, SUBSAMPLE_STREAM);
            let mut perm = permutation(dataset_size, &mut rng);
            perm.truncate(n);
            Ok(perm)
        }
    }
}

/// Loss values over a rectangular `(x, y)` grid.
///
/// `losses` is row-major with one row per y value. Entries may be finite,
/// infinite, or NaN (masked or divergent).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandscapeGrid {
    x_values: Vec<f64>,
    y_values: Vec<f64>,
    losses: Vec<f64>,
}

impl PartialEq for LandscapeGrid {
    /// Bitwise on every value.
    fn eq(&self, other: &Self) -> bool {
        fn bits(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        bits(&self.x_values, &other.x_values)
            && bits(&self.y_values, &other.y_values)
            && bits(&self.losses, &other.losses)
    }
}

impl LandscapeGrid {
    pub fn new(x_values: Vec<f64>, y_values: Vec<f64>, losses: Vec<f64>) -> Result<Self, GridError> {
        if x_values.is_empty() || y_values.is_empty() {
            return Err(GridError::Grid("axes must be nonempty".into()));
        }
        for (name, axis) in [("x", &x_values), ("y", &y_values)] {
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(GridError::Grid(format!("{name} values must be finite")));
            }
            if !strictly_increasing(axis) {
                return Err(GridError::Grid(format!("{name} values must be strictly increasing")));
            }
        }
        if losses.len() != x_values.len() * y_values.len() {
            return Err(GridError::Grid(format!(
                "{} losses for a {}x{} grid",
                losses.len(),
                x_values.len(),
                y_values.len()
            )));
        }
        Ok(Self {
            x_values,
            y_values,
            losses,
        })
    }

    /// Builds a grid by evaluating `f(x, y)` at every point.
    pub fn from_fn(spec: &GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self, GridError> {
        spec.validate()?;
        let xs = spec.x_values();
        let ys = spec.y_values();
        let losses = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(xs, ys, losses)
    }

    pub fn x_values(&self) -> &[f64] {
        &self.x_values
    }

    pub fn y_values(&self) -> &[f64] {
        &self.y_values
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn resolution_x(&self) -> usize {
        self.x_values.len()
    }

    pub fn resolution_y(&self) -> usize {
        self.y_values.len()
    }

    /// Loss at column `i` (x index), row `j` (y index).
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.losses[j * self.x_values.len() + i]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.x_values.len();
        &self.losses[j * n..(j + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.losses.chunks(self.x_values.len())
    }

    /// Same axes, new values (e.g. after masking).
    pub fn with_losses(&self, losses: Vec<f64>) -> Result<Self, GridError> {
        Self::new(self.x_values.clone(), self.y_values.clone(), losses)
    }

    /// Index pair of `(0, 0)` when both axes contain zero.
    pub fn origin_index(&self) -> Option<(usize, usize)> {
        let i = self.x_values.iter().position(|v| *v == 0.0)?;
        let j = self.y_values.iter().position(|v| *v == 0.0)?;
        Some((i, j))
    }

    pub fn same_plane(&self, other: &LandscapeGrid) -> bool {
        self.x_values == other.x_values && self.y_values == other.y_values
    }
}

/// Receives completed-point counts while a grid is evaluated.
///
/// Calls are serialized and the counts strictly increase, but they may come
/// from any worker thread.
pub trait ProgressSink: Sync {
    fn completed(&self, done: usize, total: usize);
}

impl ProgressSink for () {
    fn completed(&self, _: usize, _: usize) {}
}

impl<F: Fn(usize, usize) + Sync> ProgressSink for F {
    fn completed(&self, done: usize, total: usize) {
        self(done, total)
    }
}

/// Everything `evaluate_grid` needs besides the pool and the progress sink.
pub struct GridProblem<'a> {
    pub network: &'a Network,
    pub theta: &'a ModelParameters,
    pub directions: &'a DirectionPair,
    pub dataset: &'a Dataset,
    pub grid: &'a GridSpec,
    pub eval: &'a EvalConfig,
}

/// Loss of `theta + x * delta + y * eta` at every grid point.
///
/// The evaluation subset is chosen once by [`subsample_indices`] and shared by
/// all points. Points are spread over `workers` threads; each point is
/// computed independently, so the result does not depend on `workers`.
/// Non-finite losses are stored as computed.
pub fn evaluate_grid(problem: &GridProblem<'_>, workers: usize, progress: &dyn ProgressSink) -> Result<LandscapeGrid, GridError> {
    let GridProblem {
        network,
        theta,
        directions,
        dataset,
        grid,
        eval,
    } = *problem;
    grid.validate()?;
    theta.check(network)?;
    let registry = theta.registry();
    if directions.delta.registry() != registry || directions.eta.registry() != registry {
        return Err(GridError::DirectionShape);
    }
    let indices = subsample_indices(dataset.size(), eval)?;
    let subset = dataset.select(&indices);
    // surfaces input/target shape errors before any work is scheduled
    model_loss(network, theta, subset.inputs(), subset.targets(), eval.loss_kind)?;

    let xs = grid.x_values();
    let ys = grid.y_values();
    let total = grid.points();
    let done = Mutex::new(0usize);
    let point_loss = |k: usize| -> Result<f64, EvalError> {
        let (x, y) = (xs[k % xs.len()], ys[k / xs.len()]);
        let value = loss_at(network, theta, directions, &subset, eval.loss_kind, x, y)?;
        let mut n = done.lock().unwrap();
        *n += 1;
        progress.completed(*n, total);
        Ok(value)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| GridError::Pool(e.to_string()))?;
    let losses = pool.install(|| (0..total).into_par_iter().map(point_loss).collect::<Result<Vec<f64>, _>>())?;
    LandscapeGrid::new(xs, ys, losses)
}

/// Loss at one slice coordinate; `(0, 0)` evaluates `theta` itself.
pub fn loss_at(
    network: &Network,
    theta: &ModelParameters,
    directions: &DirectionPair,
    subset: &Dataset,
    kind: LossKind,
    x: f64,
    y: f64,
) -> Result<f64, EvalError> {
    let eval = |params: &ModelParameters| model_loss(network, params, subset.inputs(), subset.targets(), kind);
    if x == 0.0 && y == 0.0 {
        eval(theta)
    } else {
        eval(&theta.offset_along(&directions.delta, x, &directions.eta, y))
    }
}
