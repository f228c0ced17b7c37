//! Per-layer parameter storage, initialization, and flattening.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, Network};
use crate::tensor::Tensor;

/// Shapes of every parameter tensor, grouped by layer.
pub type ShapeRegistry = Vec<Vec<Vec<usize>>>;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("flat vector has {found} elements, the shape registry needs {expected}")]
pub struct FlattenError {
    pub expected: usize,
    pub found: usize,
}

/// Parameter tensors of a network, one list per layer (weights, then bias).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub layers: Vec<Vec<Tensor>>,
}

impl ModelParameters {
    pub fn zeros(network: &Network) -> Self {
        Self::zeros_from_registry(&network.param_shapes())
    }

    pub fn zeros_from_registry(registry: &[Vec<Vec<usize>>]) -> Self {
        Self {
            layers: registry
                .iter()
                .map(|layer| layer.iter().map(|s| Tensor::zeros(s)).collect())
                .collect(),
        }
    }

    /// He initialization: weights ~ N(0, 2/fan_in), biases zero.
    ///
    /// `fan_in` is the product of all weight dimensions after the first
    /// (inputs for dense rows, `in_channels * kh * kw` for conv filters).
    /// Draws come from ChaCha20 seeded with `seed`, in layer/tensor/row-major order.
    pub fn init_he(network: &Network, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let layers = network
            .param_shapes()
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|shape| {
                        if shape.len() < 2 {
                            return Tensor::zeros(shape);
                        }
                        let fan_in: usize = shape[1..].iter().product();
                        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                        Tensor::from_fn(shape, |_| normal.sample(&mut rng))
                    })
                    .collect()
            })
            .collect();
        Self { layers }
    }

    pub fn registry(&self) -> ShapeRegistry {
        self.layers
            .iter()
            .map(|layer| layer.iter().map(|t| t.shape().to_vec()).collect())
            .collect()
    }

    /// Checks a one-to-one structural match with `network`.
    pub fn check(&self, network: &Network) -> Result<(), ModelError> {
        let expected = network.param_shapes();
        if expected.len() != self.layers.len() {
            return Err(ModelError::LayerCount {
                expected: expected.len(),
                found: self.layers.len(),
            });
        }
        for (layer, (want, have)) in expected.iter().zip(&self.layers).enumerate() {
            if want.len() != have.len() {
                return Err(ModelError::ParamCount {
                    layer,
                    expected: want.len(),
                    found: have.len(),
                });
            }
            for (tensor, (w, h)) in want.iter().zip(have).enumerate() {
                if w.as_slice() != h.shape() {
                    return Err(ModelError::ParamShape {
                        layer,
                        tensor,
                        expected: w.clone(),
                        found: h.shape().to_vec(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flatten()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flatten()
    }

    /// Concatenates all entries: layer order, then tensor order, then row-major.
    pub fn flatten(&self) -> Tensor {
        let data: Vec<f64> = self.tensors().flat_map(|t| t.data().iter().copied()).collect();
        let n = data.len();
        Tensor::new(vec![n], data).unwrap()
    }

    /// Inverse of [`flatten`](Self::flatten) for the given registry.
    pub fn unflatten(registry: &[Vec<Vec<usize>>], flat: &Tensor) -> Result<Self, FlattenError> {
        let expected: usize = registry
            .iter()
            .flatten()
            .map(|s| s.iter().product::<usize>())
            .sum();
        if expected != flat.len() {
            return Err(FlattenError {
                expected,
                found: flat.len(),
            });
        }
        let mut offset = 0;
        let layers = registry
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|shape| {
                        let n: usize = shape.iter().product();
                        let chunk = flat.data()[offset..offset + n].to_vec();
                        offset += n;
                        Tensor::new(shape.clone(), chunk).unwrap()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { layers })
    }

    /// `self += scale * other`; structures must match.
    pub fn add_scaled(&mut self, other: &ModelParameters, scale: f64) {
        for (dst, src) in self.tensors_mut().zip(other.tensors()) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += scale * s;
            }
        }
    }

    /// `self + x * dx + y * dy`, evaluated entrywise in that order.
    pub fn offset_along(&self, dx: &ModelParameters, x: f64, dy: &ModelParameters, y: f64) -> Self {
        let mut out = self.clone();
        for ((dst, a), b) in out.tensors_mut().zip(dx.tensors()).zip(dy.tensors()) {
            for ((d, av), bv) in dst.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                *d = *d + x * av + y * bv;
            }
        }
        out
    }

    pub fn scaled(&self, scale: f64) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }

    pub fn bit_eq(&self, other: &ModelParameters) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bit_eq(y))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_layer() -> Network {
        "input 3\ndense 3 2\nrelu\ndense 2 4 nobias\n".parse().unwrap()
    }

    #[test]
    fn empty_model_flattens_to_empty() {
        let net: Network = "input 5\nrelu\n".parse().unwrap();
        let p = ModelParameters::zeros(&net);
        assert!(p.flatten().is_empty());
    }

    #[test]
    fn hand_computed_offset() {
        // Layout: layer0 weight [2,3] (0..6), layer0 bias [2] (6..8),
        // layer1 none, layer2 weight [4,2] (8..16). Entry W2[1][0] sits at 8 + 1*2 + 0 = 10.
        let net = two_layer();
        let mut p = ModelParameters::zeros(&net);
        p.layers[2][0].data_mut()[2] = 7.25;
        let flat = p.flatten();
        assert_eq!(flat.len(), 16);
        assert_eq!(flat.data()[10], 7.25);
        assert_eq!(flat.data().iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let reg = two_layer().param_shapes();
        let err = ModelParameters::unflatten(&reg, &Tensor::zeros(&[15])).unwrap_err();
        assert_eq!(err, FlattenError { expected: 16, found: 15 });
    }

    #[test]
    fn init_is_seeded_and_biases_start_at_zero() {
        let net = two_layer();
        let a = ModelParameters::init_he(&net, 9);
        assert!(a.bit_eq(&ModelParameters::init_he(&net, 9)));
        assert!(!a.bit_eq(&ModelParameters::init_he(&net, 10)));
        assert!(a.layers[0][1].data().iter().all(|v| *v == 0.0));
        a.check(&net).unwrap();
    }

    #[test]
    fn check_reports_shape_mismatch() {
        let net = two_layer();
        let mut p = ModelParameters::zeros(&net);
        p.layers[0][0] = Tensor::zeros(&[3, 2]);
        assert!(matches!(
            p.check(&net),
            Err(ModelError::ParamShape { layer: 0, tensor: 0, .. })
        ));
    }

    proptest! {
        #[test]
        fn flatten_round_trip_is_bitwise(seed in any::<u64>(), values in prop::collection::vec(any::<f64>(), 16)) {
            let net = two_layer();
            let reg = net.param_shapes();
            let mut p = ModelParameters::init_he(&net, seed);
            // arbitrary bit patterns, including NaN payloads and signed zeros
            let flat = Tensor::new(vec![16], values).unwrap();
            p = ModelParameters::unflatten(&reg, &flat).unwrap_or(p);
            let back = ModelParameters::unflatten(&reg, &p.flatten()).unwrap();
            prop_assert!(back.bit_eq(&p));
            prop_assert!(back.flatten().bit_eq(&flat));
        }
    }
}
