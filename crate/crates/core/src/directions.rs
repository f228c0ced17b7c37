//! Random direction pairs and per-filter normalization.
//!
//! A direction is a [`ModelParameters`]-shaped perturbation. Every tensor of
//! rank >= 2 is split into filters along its first axis: a dense weight
//! `[outputs, inputs]` has one filter per output neuron (its incoming row),
//! a conv weight `[out, in, kh, kw]` one per output channel (the whole
//! `in x kh x kw` block). Rank 0/1 tensors (biases) are not filters and get
//! all-zero direction entries.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::ModelParameters;
use crate::sampling::rng_for;
use crate::tensor::{frobenius, Tensor};

pub const DELTA_STREAM: u64 = 3;
pub const ETA_STREAM: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DirectionError {
    #[error("direction layout {found:?} does not match the reference parameters {expected:?}")]
    ShapeMismatch {
        expected: Vec<Vec<Vec<usize>>>,
        found: Vec<Vec<Vec<usize>>>,
    },
    #[error("direction pair is already filter-normalized")]
    AlreadyNormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionPair {
    pub delta: ModelParameters,
    pub eta: ModelParameters,
    pub seed: u64,
    pub normalized: bool,
    /// Human-readable notes accumulated while building the pair.
    pub warnings: Vec<String>,
}

/// Draws both directions from ChaCha20 seeded with `seed`.
///
/// `delta` uses stream [`DELTA_STREAM`], `eta` stream [`ETA_STREAM`]. Filter
/// entries are i.i.d. `StandardNormal` (rand_distr ziggurat) in
/// layer/tensor/row-major order; bias entries are zero and draw nothing.
pub fn sample_directions(reference: &ModelParameters, seed: u64) -> DirectionPair {
    let draw = |stream| {
        let mut rng = rng_for(seed, stream);
        let mut out = reference.clone();
        for t in out.tensors_mut() {
            if is_filter_tensor(t) {
                t.data_mut().iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            } else {
                t.data_mut().fill(0.0);
            }
        }
        out
    };
    let mut warnings = Vec::new();
    let bias_entries: usize = reference
        .tensors()
        .filter(|t| !is_filter_tensor(t))
        .map(Tensor::len)
        .sum();
    if bias_entries > 0 {
        warnings.push(format!(
            "{bias_entries} bias/scalar entries excluded from the directions (zero direction)"
        ));
    }
    DirectionPair {
        delta: draw(DELTA_STREAM),
        eta: draw(ETA_STREAM),
        seed,
        normalized: false,
        warnings,
    }
}

fn is_filter_tensor(t: &Tensor) -> bool {
    t.rank() >= 2
}

fn filter_width(t: &Tensor) -> usize {
    t.shape()[1..].iter().product()
}

/// Rescales each filter of both directions to the Frobenius norm of the
/// matching filter in `reference`; bias entries are forced to zero.
///
/// A direction filter with zero norm stays zero and adds a warning.
pub fn filter_normalize(pair: &DirectionPair, reference: &ModelParameters) -> Result<DirectionPair, DirectionError> {
    if pair.normalized {
        return Err(DirectionError::AlreadyNormalized);
    }
    let expected = reference.registry();
    for d in [&pair.delta, &pair.eta] {
        let found = d.registry();
        if found != expected {
            return Err(DirectionError::ShapeMismatch { expected, found });
        }
    }
    let mut warnings = pair.warnings.clone();
    let mut normalize = |direction: &ModelParameters, name: &str| {
        let mut out = direction.clone();
        for (layer, (dir_layer, ref_layer)) in out.layers.iter_mut().zip(&reference.layers).enumerate() {
            for (tensor, (d, r)) in dir_layer.iter_mut().zip(ref_layer).enumerate() {
                if !is_filter_tensor(r) {
                    d.data_mut().fill(0.0);
                    continue;
                }
                let width = filter_width(r);
                if width == 0 {
                    continue;
                }
                for (f, (df, rf)) in d
                    .data_mut()
                    .chunks_mut(width)
                    .zip(r.data().chunks(width))
                    .enumerate()
                {
                    let dnorm = frobenius(df);
                    if dnorm == 0.0 {
                        warnings.push(format!(
                            "{name}: layer {layer} tensor {tensor} filter {f} has a zero direction; left at zero"
                        ));
                        continue;
                    }
                    let scale = frobenius(rf) / dnorm;
                    df.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        out
    };
    let delta = normalize(&pair.delta, "delta");
    let eta = normalize(&pair.eta, "eta");
    Ok(DirectionPair {
        delta,
        eta,
        seed: pair.seed,
        normalized: true,
        warnings,
    })
}

/// Per-filter Frobenius norms in layer/tensor/filter order (filters only).
pub fn filter_norms(params: &ModelParameters) -> Vec<f64> {
    params
        .tensors()
        .filter(|t| is_filter_tensor(t))
        .flat_map(|t| {
            let width = filter_width(t).max(1);
            t.data().chunks(width).map(frobenius).collect::<Vec<_>>()
        })
        .collect()
}
