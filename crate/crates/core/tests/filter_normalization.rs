//! Property suite for per-filter direction normalization.

mod common;

use common::random_network;
use landscape_core::directions::{filter_norms, DirectionPair};
use landscape_core::{filter_normalize, sample_directions, ModelParameters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: usize = 1000;
const TOL: f64 = 1e-12;

fn max_abs_diff(a: &ModelParameters, b: &ModelParameters) -> f64 {
    a.flatten()
        .data()
        .iter()
        .zip(b.flatten().data())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn normalized_filters_match_reference_norms_and_ignore_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf11e);
    let mut worst_norm = 0.0f64;
    let mut worst_scale = 0.0f64;
    for trial in 0..TRIALS {
        let network = random_network(&mut rng, 1000);
        // vary theta's scale so norms are not all He-sized
        let theta = ModelParameters::init_he(&network, rng.random()).scaled(10f64.powf(rng.random_range(-3.0..3.0)));
        let raw = sample_directions(&theta, rng.random());
        let pair = filter_normalize(&raw, &theta).unwrap();

        let want = filter_norms(&theta);
        for d in [&pair.delta, &pair.eta] {
            let got = filter_norms(d);
            assert_eq!(got.len(), want.len());
            for (f, (g, w)) in got.iter().zip(&want).enumerate() {
                let rel = (g - w).abs() / w.abs().max(f64::MIN_POSITIVE);
                assert!(rel < TOL, "trial {trial} filter {f}: {g} vs {w}");
                worst_norm = worst_norm.max(rel);
            }
            // biases carry no direction
            for (t, r) in d.tensors().zip(theta.tensors()) {
                if r.rank() < 2 {
                    assert!(t.data().iter().all(|v| *v == 0.0));
                }
            }
        }

        let c = rng.random_range(f64::EPSILON..=1e3);
        let scaled = DirectionPair {
            delta: raw.delta.scaled(c),
            eta: raw.eta.scaled(c),
            ..raw.clone()
        };
        let rescaled = filter_normalize(&scaled, &theta).unwrap();
        let diff = max_abs_diff(&rescaled.delta, &pair.delta).max(max_abs_diff(&rescaled.eta, &pair.eta));
        assert!(diff < TOL, "trial {trial}: c = {c}, max diff {diff}");
        worst_scale = worst_scale.max(diff);
    }
    println!("{TRIALS} trials: worst norm rel error {worst_norm:.2e}, worst scale-invariance diff {worst_scale:.2e}");
}
