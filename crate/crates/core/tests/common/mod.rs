#![allow(dead_code)]

use landscape_core::{forward, LayerSpec, ModelParameters, Network, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A random valid network with at most `max_params` parameters: either a
/// dense stack (dense / relu / residual with or without skip) or a small
/// conv front end followed by dense layers.
pub fn random_network(rng: &mut ChaCha8Rng, max_params: usize) -> Network {
    loop {
        let net = if rng.random_bool(0.5) { dense_stack(rng) } else { conv_stack(rng) };
        if net.param_count() <= max_params && net.param_count() > 0 {
            return net;
        }
    }
}

fn dense_stack(rng: &mut ChaCha8Rng) -> Network {
    let mut width = rng.random_range(1..=24);
    let input = vec![width];
    let mut layers = Vec::new();
    for _ in 0..rng.random_range(1..=4) {
        match rng.random_range(0..3) {
            0 => {
                let outputs = rng.random_range(1..=24);
                layers.push(LayerSpec::Dense { inputs: width, outputs, bias: rng.random_bool(0.7) });
                width = outputs;
            }
            1 => layers.push(LayerSpec::Relu),
            _ => layers.push(LayerSpec::ResidualBlock { features: width, skip: rng.random_bool(0.5) }),
        }
    }
    let outputs = rng.random_range(2..=5);
    layers.push(LayerSpec::Dense { inputs: width, outputs, bias: rng.random_bool(0.7) });
    Network::new(input, layers).unwrap()
}

fn conv_stack(rng: &mut ChaCha8Rng) -> Network {
    let c = rng.random_range(1..=3);
    let (h, w) = (rng.random_range(3..=8), rng.random_range(3..=8));
    let out = rng.random_range(1..=4);
    let (kh, kw) = (rng.random_range(1..=h.min(3)), rng.random_range(1..=w.min(3)));
    let flat = out * (h - kh + 1) * (w - kw + 1);
    let mut layers = vec![
        LayerSpec::Conv2d { in_channels: c, out_channels: out, kernel_h: kh, kernel_w: kw, bias: rng.random_bool(0.7) },
    ];
    if rng.random_bool(0.7) {
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Flatten);
    let outputs = rng.random_range(2..=4);
    layers.push(LayerSpec::Dense { inputs: flat, outputs, bias: rng.random_bool(0.7) });
    Network::new(vec![c, h, w], layers).unwrap()
}

pub fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut *rng))
}

pub fn batch_inputs(rng: &mut ChaCha8Rng, network: &Network, batch: usize) -> Tensor {
    let mut shape = vec![batch];
    shape.extend_from_slice(network.input_shape());
    normal_tensor(rng, &shape)
}

/// Signs of every ReLU input, in layer order.
pub fn relu_pattern(network: &Network, params: &ModelParameters, inputs: &Tensor) -> Vec<bool> {
    let mut pattern = Vec::new();
    for (k, layer) in network.layers().iter().enumerate() {
        let mut prefix: Vec<LayerSpec> = network.layers()[..k].to_vec();
        let mut prefix_params = ModelParameters { layers: params.layers[..k].to_vec() };
        match layer {
            LayerSpec::Relu => {}
            LayerSpec::ResidualBlock { features, .. } => {
                prefix.push(LayerSpec::Dense { inputs: *features, outputs: *features, bias: true });
                prefix_params.layers.push(params.layers[k][..2].to_vec());
            }
            _ => continue,
        }
        let z = if prefix.is_empty() {
            inputs.clone()
        } else {
            let net = Network::new(network.input_shape().to_vec(), prefix).unwrap();
            forward(&net, &prefix_params, inputs).unwrap()
        };
        pattern.extend(z.data().iter().map(|v| *v > 0.0));
    }
    pattern
}
