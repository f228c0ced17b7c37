//! Forward pass, losses, and layer-by-layer reverse-mode gradients.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Targets;
use crate::model::{LayerSpec, ModelError, Network};
use crate::params::ModelParameters;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross-entropy",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "cross-entropy" | "ce" => Ok(LossKind::CrossEntropy),
            other => Err(format!("unknown loss kind `{other}` (expected mse or cross-entropy)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LossError {
    #[error("loss of an empty batch is undefined")]
    EmptyBatch,
    #[error("predictions have batch size {predictions}, targets {targets}")]
    BatchMismatch { predictions: usize, targets: usize },
    #[error("prediction shape {predictions:?} does not match target shape {targets:?}")]
    ShapeMismatch {
        predictions: Vec<usize>,
        targets: Vec<usize>,
    },
    #[error("sample {sample}: class {class} out of range for {classes} outputs")]
    ClassOutOfRange {
        sample: usize,
        class: usize,
        classes: usize,
    },
    #[error("cross-entropy needs class-index targets")]
    NeedsClasses,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

fn check_inputs(network: &Network, params: &ModelParameters, inputs: &Tensor) -> Result<usize, ModelError> {
    params.check(network)?;
    let shape = inputs.shape();
    if shape.is_empty() || &shape[1..] != network.input_shape() {
        return Err(ModelError::InputShape {
            expected: network.input_shape().to_vec(),
            found: shape.get(1..).unwrap_or(&[]).to_vec(),
        });
    }
    Ok(shape[0])
}

/// Runs `inputs` (shape `[batch, ..input_shape]`) through the network.
pub fn forward(network: &Network, params: &ModelParameters, inputs: &Tensor) -> Result<Tensor, ModelError> {
    let batch = check_inputs(network, params, inputs)?;
    let mut x = inputs.data().to_vec();
    for (i, layer) in network.layers().iter().enumerate() {
        x = layer_forward(layer, &params.layers[i], network.shape_before(i), batch, &x);
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(network.output_shape());
    Ok(Tensor::new(shape, x).unwrap())
}

/// Mean loss over the batch (and, for MSE, over output elements).
pub fn loss(predictions: &Tensor, targets: &Targets, kind: LossKind) -> Result<f64, LossError> {
    loss_and_grad(predictions, targets, kind, false).map(|(l, _)| l)
}

/// Loss of `params` on a batch, through the same path the grid evaluator uses.
pub fn model_loss(
    network: &Network,
    params: &ModelParameters,
    inputs: &Tensor,
    targets: &Targets,
    kind: LossKind,
) -> Result<f64, EvalError> {
    let predictions = forward(network, params, inputs)?;
    Ok(loss(&predictions, targets, kind)?)
}

/// Mean batch loss and its exact gradient with respect to every parameter.
pub fn gradient(
    network: &Network,
    params: &ModelParameters,
    inputs: &Tensor,
    targets: &Targets,
    kind: LossKind,
) -> Result<(f64, ModelParameters), EvalError> {
    let batch = check_inputs(network, params, inputs)?;
    let layers = network.layers();
    let mut activations = Vec::with_capacity(layers.len() + 1);
    activations.push(inputs.data().to_vec());
    for (i, layer) in layers.iter().enumerate() {
        let next = layer_forward(layer, &params.layers[i], network.shape_before(i), batch, &activations[i]);
        activations.push(next);
    }
    let mut out_shape = vec![batch];
    out_shape.extend_from_slice(network.output_shape());
    let predictions = Tensor::new(out_shape, activations.pop().unwrap()).unwrap();
    let (value, grad_out) = loss_and_grad(&predictions, targets, kind, true)?;

    let mut grads = ModelParameters::zeros(network);
    let mut upstream = grad_out.unwrap();
    for i in (0..layers.len()).rev() {
        upstream = layer_backward(
            &layers[i],
            &params.layers[i],
            network.shape_before(i),
            batch,
            &activations[i],
            &upstream,
            &mut grads.layers[i],
        );
    }
    Ok((value, grads))
}

fn loss_and_grad(
    predictions: &Tensor,
    targets: &Targets,
    kind: LossKind,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>), LossError> {
    let batch = predictions.shape().first().copied().unwrap_or(0);
    if batch != targets.len() {
        return Err(LossError::BatchMismatch {
            predictions: batch,
            targets: targets.len(),
        });
    }
    if batch == 0 {
        return Err(LossError::EmptyBatch);
    }
    let width = predictions.len() / batch;
    let p = predictions.data();
    match kind {
        LossKind::Mse => {
            let owned;
            let t: &[f64] = match targets {
                Targets::Values(t) => {
                    if t.shape() != predictions.shape() {
                        return Err(LossError::ShapeMismatch {
                            predictions: predictions.shape().to_vec(),
                            targets: t.shape().to_vec(),
                        });
                    }
                    t.data()
                }
                Targets::Classes(classes) => {
                    owned = one_hot(classes, width)?;
                    &owned
                }
            };
            let n = p.len() as f64;
            let value = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
            let grad = want_grad.then(|| p.iter().zip(t).map(|(a, b)| 2.0 * (a - b) / n).collect());
            Ok((value, grad))
        }
        LossKind::CrossEntropy => {
            let Targets::Classes(classes) = targets else {
                return Err(LossError::NeedsClasses);
            };
            check_classes(classes, width)?;
            let mut total = 0.0;
            let mut grad = want_grad.then(|| vec![0.0; p.len()]);
            for (b, &class) in classes.iter().enumerate() {
                let row = &p[b * width..(b + 1) * width];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
                let lse = max + sum.ln();
                total += lse - row[class];
                if let Some(g) = grad.as_mut() {
                    let g = &mut g[b * width..(b + 1) * width];
                    for (k, (gk, z)) in g.iter_mut().zip(row).enumerate() {
                        let soft = (z - lse).exp();
                        *gk = (soft - if k == class { 1.0 } else { 0.0 }) / batch as f64;
                    }
                }
            }
            Ok((total / batch as f64, grad))
        }
    }
}

fn check_classes(classes: &[usize], width: usize) -> Result<(), LossError> {
    match classes.iter().position(|&c| c >= width) {
        Some(sample) => Err(LossError::ClassOutOfRange {
            sample,
            class: classes[sample],
            classes: width,
        }),
        None => Ok(()),
    }
}

fn one_hot(classes: &[usize], width: usize) -> Result<Vec<f64>, LossError> {
    check_classes(classes, width)?;
    let mut out = vec![0.0; classes.len() * width];
    for (b, &c) in classes.iter().enumerate() {
        out[b * width + c] = 1.0;
    }
    Ok(out)
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// `y[b, o] = sum_i w[o, i] * x[b, i] (+ bias[o])`
fn dense_forward(w: &[f64], bias: Option<&[f64]>, inputs: usize, outputs: usize, batch: usize, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; batch * outputs];
    for b in 0..batch {
        let xb = &x[b * inputs..(b + 1) * inputs];
        for o in 0..outputs {
            let row = &w[o * inputs..(o + 1) * inputs];
            let mut acc = bias.map_or(0.0, |bias| bias[o]);
            for (wi, xi) in row.iter().zip(xb) {
                acc += wi * xi;
            }
            y[b * outputs + o] = acc;
        }
    }
    y
}

/// Accumulates weight/bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn dense_backward(
    w: &[f64],
    inputs: usize,
    outputs: usize,
    batch: usize,
    x: &[f64],
    gy: &[f64],
    gw: &mut [f64],
    mut gbias: Option<&mut [f64]>,
) -> Vec<f64> {
    let mut gx = vec![0.0; batch * inputs];
    for b in 0..batch {
        let xb = &x[b * inputs..(b + 1) * inputs];
        let gxb = &mut gx[b * inputs..(b + 1) * inputs];
        for o in 0..outputs {
            let g = gy[b * outputs + o];
            if let Some(gb) = gbias.as_deref_mut() {
                gb[o] += g;
            }
            if g == 0.0 {
                continue;
            }
            let row = &w[o * inputs..(o + 1) * inputs];
            let grow = &mut gw[o * inputs..(o + 1) * inputs];
            for i in 0..inputs {
                grow[i] += g * xb[i];
                gxb[i] += g * row[i];
            }
        }
    }
    gx
}

fn layer_forward(layer: &LayerSpec, params: &[Tensor], in_shape: &[usize], batch: usize, x: &[f64]) -> Vec<f64> {
    match *layer {
        LayerSpec::Dense {
            inputs, outputs, ..
        } => dense_forward(
            params[0].data(),
            params.get(1).map(Tensor::data),
            inputs,
            outputs,
            batch,
            x,
        ),
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            ..
        } => {
            let (h, w) = (in_shape[1], in_shape[2]);
            let (oh, ow) = (h - kernel_h + 1, w - kernel_w + 1);
            let weights = params[0].data();
            let bias = params.get(1).map(Tensor::data);
            let in_size = in_channels * h * w;
            let out_size = out_channels * oh * ow;
            let kernel = in_channels * kernel_h * kernel_w;
            let mut y = vec![0.0; batch * out_size];
            for b in 0..batch {
                let xb = &x[b * in_size..(b + 1) * in_size];
                for o in 0..out_channels {
                    let k = &weights[o * kernel..(o + 1) * kernel];
                    let start = bias.map_or(0.0, |bias| bias[o]);
                    for p in 0..oh {
                        for q in 0..ow {
                            let mut acc = start;
                            for c in 0..in_channels {
                                for u in 0..kernel_h {
                                    let xrow = &xb[c * h * w + (p + u) * w + q..][..kernel_w];
                                    let krow = &k[(c * kernel_h + u) * kernel_w..][..kernel_w];
                                    for (kv, xv) in krow.iter().zip(xrow) {
                                        acc += kv * xv;
                                    }
                                }
                            }
                            y[b * out_size + (o * oh + p) * ow + q] = acc;
                        }
                    }
                }
            }
            y
        }
        LayerSpec::Relu => x.iter().map(|&v| relu(v)).collect(),
        LayerSpec::Flatten => x.to_vec(),
        LayerSpec::ResidualBlock { features, skip } => {
            let hidden = dense_forward(params[0].data(), Some(params[1].data()), features, features, batch, x);
            let act: Vec<f64> = hidden.into_iter().map(relu).collect();
            let mut y = dense_forward(params[2].data(), Some(params[3].data()), features, features, batch, &act);
            if skip {
                y.iter_mut().zip(x).for_each(|(yv, xv)| *yv += xv);
            }
            y
        }
    }
}

fn layer_backward(
    layer: &LayerSpec,
    params: &[Tensor],
    in_shape: &[usize],
    batch: usize,
    x: &[f64],
    gy: &[f64],
    grads: &mut [Tensor],
) -> Vec<f64> {
    match *layer {
        LayerSpec::Dense {
            inputs, outputs, ..
        } => {
            let (gw, rest) = grads.split_first_mut().unwrap();
            let gb = rest.first_mut().map(Tensor::data_mut);
            dense_backward(params[0].data(), inputs, outputs, batch, x, gy, gw.data_mut(), gb)
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            ..
        } => {
            let (h, w) = (in_shape[1], in_shape[2]);
            let (oh, ow) = (h - kernel_h + 1, w - kernel_w + 1);
            let weights = params[0].data();
            let in_size = in_channels * h * w;
            let out_size = out_channels * oh * ow;
            let kernel = in_channels * kernel_h * kernel_w;
            let (gw, rest) = grads.split_first_mut().unwrap();
            let gw = gw.data_mut();
            let mut gb = rest.first_mut().map(Tensor::data_mut);
            let mut gx = vec![0.0; batch * in_size];
            for b in 0..batch {
                let xb = &x[b * in_size..(b + 1) * in_size];
                let gxb = &mut gx[b * in_size..(b + 1) * in_size];
                for o in 0..out_channels {
                    let k = &weights[o * kernel..(o + 1) * kernel];
                    let gk = &mut gw[o * kernel..(o + 1) * kernel];
                    for p in 0..oh {
                        for q in 0..ow {
                            let g = gy[b * out_size + (o * oh + p) * ow + q];
                            if let Some(gb) = gb.as_deref_mut() {
                                gb[o] += g;
                            }
                            if g == 0.0 {
                                continue;
                            }
                            for c in 0..in_channels {
                                for u in 0..kernel_h {
                                    let base = c * h * w + (p + u) * w + q;
                                    let kbase = (c * kernel_h + u) * kernel_w;
                                    for v in 0..kernel_w {
                                        gk[kbase + v] += g * xb[base + v];
                                        gxb[base + v] += g * k[kbase + v];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            gx
        }
        LayerSpec::Relu => x
            .iter()
            .zip(gy)
            .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
            .collect(),
        LayerSpec::Flatten => gy.to_vec(),
        LayerSpec::ResidualBlock { features, skip } => {
            let f = features;
            let hidden = dense_forward(params[0].data(), Some(params[1].data()), f, f, batch, x);
            let act: Vec<f64> = hidden.iter().copied().map(relu).collect();
            let [gw1, gb1, gw2, gb2] = grads else {
                unreachable!("residual block has four parameter tensors")
            };
            let g_act = dense_backward(params[2].data(), f, f, batch, &act, gy, gw2.data_mut(), Some(gb2.data_mut()));
            let g_hidden: Vec<f64> = hidden
                .iter()
                .zip(&g_act)
                .map(|(&h, &g)| if h > 0.0 { g } else { 0.0 })
                .collect();
            let mut gx = dense_backward(params[0].data(), f, f, batch, x, &g_hidden, gw1.data_mut(), Some(gb1.data_mut()));
            if skip {
                gx.iter_mut().zip(gy).for_each(|(a, b)| *a += b);
            }
            gx
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_dense_layer() {
        let net: Network = "input 2\ndense 2 2\n".parse().unwrap();
        let mut p = ModelParameters::zeros(&net);
        p.layers[0][0] = tensor(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let out = forward(&net, &p, &tensor(&[1, 2], &[1.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let net: Network = "input 2\nrelu\n".parse().unwrap();
        let p = ModelParameters::zeros(&net);
        let out = forward(&net, &p, &tensor(&[1, 2], &[-1.0, 3.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 3.0]);
    }

    #[test]
    fn all_ones_conv_sums_windows() {
        let net: Network = "input 1 3 3\nconv2d 1 1 2 2 nobias\n".parse().unwrap();
        let mut p = ModelParameters::zeros(&net);
        p.layers[0][0] = tensor(&[1, 1, 2, 2], &[1.0; 4]);
        let out = forward(&net, &p, &tensor(&[1, 1, 3, 3], &[1.0; 9])).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[4.0; 4]);
    }

    #[test]
    fn conv_matches_hand_arithmetic_on_ramp() {
        // x = 0..9 laid out 3x3, kernel [[1,2],[3,4]], bias 0.5
        // top-left window [0,1,3,4] -> 0+2+9+16 = 27.5 with bias
        let net: Network = "input 1 3 3\nconv2d 1 1 2 2\n".parse().unwrap();
        let mut p = ModelParameters::zeros(&net);
        p.layers[0][0] = tensor(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        p.layers[0][1] = tensor(&[1], &[0.5]);
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let out = forward(&net, &p, &x).unwrap();
        assert_eq!(out.data(), &[27.5, 37.5, 57.5, 67.5]);
    }

    #[test]
    fn input_shape_mismatch_is_structural() {
        let net: Network = "input 3\ndense 3 1\n".parse().unwrap();
        let p = ModelParameters::zeros(&net);
        let err = forward(&net, &p, &Tensor::zeros(&[2, 4])).unwrap_err();
        assert!(matches!(err, ModelError::InputShape { .. }));
    }

    #[test]
    fn residual_with_zero_inner_weights_is_identity() {
        let net: Network = "input 3\nresidual 3 skip\n".parse().unwrap();
        let p = ModelParameters::zeros(&net);
        let x = tensor(&[2, 3], &[-1.5, 0.0, 2.0, 7.0, -3.25, 1e-3]);
        assert!(forward(&net, &p, &x).unwrap().bit_eq(&x));
        let off: Network = "input 3\nresidual 3 noskip\n".parse().unwrap();
        assert!(forward(&off, &p, &x).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mse_examples() {
        let t = Targets::Values(tensor(&[1, 2], &[3.0, 4.0]));
        assert_eq!(loss(&tensor(&[1, 2], &[3.0, 4.0]), &t, LossKind::Mse).unwrap(), 0.0);
        assert_eq!(loss(&tensor(&[1, 2], &[0.0, 0.0]), &t, LossKind::Mse).unwrap(), 12.5);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 3, 10] {
            let p = Tensor::from_fn(&[4, k], |_| 0.37);
            let t = Targets::Classes(vec![0, k - 1, 1, 0]);
            let l = loss(&p, &t, LossKind::CrossEntropy).unwrap();
            assert!((l - (k as f64).ln()).abs() < 1e-15, "k={k}: {l}");
        }
    }

    #[test]
    fn loss_errors() {
        let p = Tensor::zeros(&[0, 2]);
        assert_eq!(loss(&p, &Targets::Classes(vec![]), LossKind::Mse), Err(LossError::EmptyBatch));
        let p = Tensor::zeros(&[2, 2]);
        assert!(matches!(
            loss(&p, &Targets::Classes(vec![0]), LossKind::Mse),
            Err(LossError::BatchMismatch { .. })
        ));
        assert!(matches!(
            loss(&p, &Targets::Classes(vec![0, 2]), LossKind::CrossEntropy),
            Err(LossError::ClassOutOfRange { sample: 1, .. })
        ));
        assert_eq!(
            loss(&p, &Targets::Values(Tensor::zeros(&[2, 2])), LossKind::CrossEntropy),
            Err(LossError::NeedsClasses)
        );
    }

    #[test]
    fn cross_entropy_is_nonnegative_for_extreme_logits() {
        let p = tensor(&[2, 3], &[1e300, -1e300, 0.0, 5.0, 5.0, 5.0]);
        let l = loss(&p, &Targets::Classes(vec![0, 2]), LossKind::CrossEntropy).unwrap();
        assert!(l >= 0.0);
    }

    #[test]
    fn scalar_model_derivative() {
        // L(w) = (w*x - t)^2 with x = 1, t = 0, w = 3 -> dL/dw = 6
        let net: Network = "input 1\ndense 1 1 nobias\n".parse().unwrap();
        let mut p = ModelParameters::zeros(&net);
        p.layers[0][0] = tensor(&[1, 1], &[3.0]);
        let t = Targets::Values(tensor(&[1, 1], &[0.0]));
        let (l, g) = gradient(&net, &p, &tensor(&[1, 1], &[1.0]), &t, LossKind::Mse).unwrap();
        assert_eq!(l, 9.0);
        assert_eq!(g.layers[0][0].data(), &[6.0]);
    }

    #[test]
    fn zero_signal_gives_zero_gradient() {
        let net: Network = "input 3\ndense 3 2\n".parse().unwrap();
        let p = ModelParameters::init_he(&net, 4);
        let x = Tensor::from_fn(&[5, 3], |i| (i as f64).sin());
        let y = forward(&net, &p, &x).unwrap();
        let (l, g) = gradient(&net, &p, &x, &Targets::Values(y), LossKind::Mse).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.tensors().all(|t| t.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn forward_is_pure() {
        let net: Network = "input 1 5 5\nconv2d 1 2 3 3\nrelu\nflatten\ndense 18 3\n".parse().unwrap();
        let p = ModelParameters::init_he(&net, 1);
        let x = Tensor::from_fn(&[4, 1, 5, 5], |i| (i as f64 * 0.37).cos());
        let (p0, x0) = (p.clone(), x.clone());
        let a = forward(&net, &p, &x).unwrap();
        let b = forward(&net, &p, &x).unwrap();
        assert!(a.bit_eq(&b));
        assert!(p.bit_eq(&p0) && x.bit_eq(&x0));
    }
}
