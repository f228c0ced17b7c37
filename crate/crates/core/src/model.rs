//! Network structure: layer specs, shape inference, and the text model format.
//!
//! A model file is a line-oriented list of layers preceded by the per-sample
//! input shape. Blank lines and `#` comments are ignored.
//!
//! ```text
//! input 1 8 8
//! conv2d 1 16 3 3        # in_channels out_channels kernel_h kernel_w
//! relu
//! flatten
//! dense 576 16           # inputs outputs; append `nobias` to drop the bias
//! relu
//! residual 16 skip       # two dense layers with a relu between; `noskip` drops the shortcut
//! dense 16 4
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("layer {layer} ({kind}): expected input shape {expected}, got {found:?}")]
    LayerShape {
        layer: usize,
        kind: &'static str,
        expected: String,
        found: Vec<usize>,
    },
    #[error("input batch has per-sample shape {found:?}, model expects {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("layer {layer}: expected {expected} parameter tensors, got {found}")]
    ParamCount {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer}, tensor {tensor}: expected shape {expected:?}, got {found:?}")]
    ParamShape {
        layer: usize,
        tensor: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameters describe {found} layers, model has {expected}")]
    LayerCount { expected: usize, found: usize },
    #[error("layer {layer} ({kind}): dimensions must be positive")]
    ZeroDimension { layer: usize, kind: &'static str },
    #[error("model spec line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One layer of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
    /// Stride 1, no padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        bias: bool,
    },
    Relu,
    Flatten,
    /// `x + W2·relu(W1·x + b1) + b2` with square `features × features`
    /// weights; without the skip the leading `x +` is dropped.
    ResidualBlock { features: usize, skip: bool },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::ResidualBlock { .. } => "residual",
        }
    }

    /// Shapes of this layer's parameter tensors, weights before biases.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense {
                inputs,
                outputs,
                bias,
            } => {
                let mut shapes = vec![vec![outputs, inputs]];
                if bias {
                    shapes.push(vec![outputs]);
                }
                shapes
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                bias,
            } => {
                let mut shapes = vec![vec![out_channels, in_channels, kernel_h, kernel_w]];
                if bias {
                    shapes.push(vec![out_channels]);
                }
                shapes
            }
            LayerSpec::Relu | LayerSpec::Flatten => Vec::new(),
            LayerSpec::ResidualBlock { features, .. } => vec![
                vec![features, features],
                vec![features],
                vec![features, features],
                vec![features],
            ],
        }
    }

    /// Per-sample output shape for a per-sample `input` shape.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>, ModelError> {
        let mismatch = |expected: String| ModelError::LayerShape {
            layer: index,
            kind: self.kind_name(),
            expected,
            found: input.to_vec(),
        };
        match *self {
            LayerSpec::Dense {
                inputs, outputs, ..
            } => {
                if input != [inputs] {
                    return Err(mismatch(format!("[{inputs}]")));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => match *input {
                [c, h, w] if c == in_channels && h >= kernel_h && w >= kernel_w => {
                    Ok(vec![out_channels, h - kernel_h + 1, w - kernel_w + 1])
                }
                _ => Err(mismatch(format!(
                    "[{in_channels}, >={kernel_h}, >={kernel_w}]"
                ))),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::ResidualBlock { features, .. } => {
                if input != [features] {
                    return Err(mismatch(format!("[{features}]")));
                }
                Ok(vec![features])
            }
        }
    }

    fn check_dimensions(&self, index: usize) -> Result<(), ModelError> {
        let dims: &[usize] = match self {
            LayerSpec::Dense {
                inputs, outputs, ..
            } => &[*inputs, *outputs],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => &[*in_channels, *out_channels, *kernel_h, *kernel_w],
            LayerSpec::ResidualBlock { features, .. } => &[*features],
            LayerSpec::Relu | LayerSpec::Flatten => &[],
        };
        if dims.contains(&0) {
            return Err(ModelError::ZeroDimension {
                layer: index,
                kind: self.kind_name(),
            });
        }
        Ok(())
    }
}

/// A validated layer stack with its per-sample input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork")]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    #[serde(skip)]
    shapes: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
struct RawNetwork {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
}

impl TryFrom<RawNetwork> for Network {
    type Error = ModelError;

    fn try_from(raw: RawNetwork) -> Result<Self, Self::Error> {
        Network::new(raw.input_shape, raw.layers)
    }
}

impl Network {
    /// Checks that every layer accepts its predecessor's output.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self, ModelError> {
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input_shape.clone());
        for (i, layer) in layers.iter().enumerate() {
            layer.check_dimensions(i)?;
            let next = layer.output_shape(i, shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Per-sample input shape of layer `i`; index `layers().len()` is the output.
    pub fn shape_before(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    /// Parameter tensor shapes per layer, in layer order.
    pub fn param_shapes(&self) -> Vec<Vec<Vec<usize>>> {
        self.layers.iter().map(LayerSpec::param_shapes).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .flatten()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// One-line human description, e.g. `1x8x8 conv2d(1->16,3x3) relu ...`.
    pub fn describe(&self) -> String {
        let mut parts = vec![self
            .input_shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x")];
        for layer in &self.layers {
            parts.push(match *layer {
                LayerSpec::Dense {
                    inputs, outputs, ..
                } => format!("dense({inputs}->{outputs})"),
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    ..
                } => format!("conv2d({in_channels}->{out_channels},{kernel_h}x{kernel_w})"),
                LayerSpec::Relu => "relu".into(),
                LayerSpec::Flatten => "flatten".into(),
                LayerSpec::ResidualBlock { features, skip } => {
                    format!("residual({features},{})", if skip { "skip" } else { "noskip" })
                }
            });
        }
        parts.join(" ")
    }
}

impl fmt::Display for Network {
    /// Writes the text model format accepted by [`Network::from_str`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "input")?;
        for d in &self.input_shape {
            write!(f, " {d}")?;
        }
        writeln!(f)?;
        for layer in &self.layers {
            match *layer {
                LayerSpec::Dense {
                    inputs,
                    outputs,
                    bias,
                } => write!(f, "dense {inputs} {outputs}{}", nobias(bias))?,
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    bias,
                } => write!(
                    f,
                    "conv2d {in_channels} {out_channels} {kernel_h} {kernel_w}{}",
                    nobias(bias)
                )?,
                LayerSpec::Relu => write!(f, "relu")?,
                LayerSpec::Flatten => write!(f, "flatten")?,
                LayerSpec::ResidualBlock { features, skip } => write!(
                    f,
                    "residual {features} {}",
                    if skip { "skip" } else { "noskip" }
                )?,
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn nobias(bias: bool) -> &'static str {
    if bias {
        ""
    } else {
        " nobias"
    }
}

impl FromStr for Network {
    type Err = ModelError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut input_shape = None;
        let mut layers = Vec::new();
        let mut last_line = 0;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            last_line = line_no;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let keyword = words.next().unwrap();
            let rest: Vec<&str> = words.collect();
            let err = |message: String| ModelError::Parse {
                line: line_no,
                message,
            };
            if keyword == "input" {
                if input_shape.is_some() {
                    return Err(err("duplicate `input` line".into()));
                }
                if !layers.is_empty() {
                    return Err(err("`input` must precede all layers".into()));
                }
                let dims = parse_counts(&rest).map_err(err)?;
                if dims.is_empty() || dims.contains(&0) {
                    return Err(err("`input` needs positive dimensions".into()));
                }
                input_shape = Some(dims);
                continue;
            }
            if input_shape.is_none() {
                return Err(err("first statement must be `input`".into()));
            }
            let layer = parse_layer(keyword, &rest).map_err(err)?;
            layers.push(layer);
        }
        let input_shape = input_shape.ok_or(ModelError::Parse {
            line: last_line.max(1),
            message: "missing `input` line".into(),
        })?;
        Network::new(input_shape, layers)
    }
}

fn parse_counts(words: &[&str]) -> Result<Vec<usize>, String> {
    words
        .iter()
        .map(|w| {
            w.parse::<usize>()
                .map_err(|_| format!("expected a count, found `{w}`"))
        })
        .collect()
}

fn parse_layer(keyword: &str, args: &[&str]) -> Result<LayerSpec, String> {
    let (flags, counts): (Vec<&str>, Vec<&str>) = args
        .iter()
        .partition(|w| w.chars().next().is_some_and(|c| c.is_ascii_alphabetic()));
    let counts = parse_counts(&counts)?;
    let want = |n: usize| {
        if counts.len() == n {
            Ok(())
        } else {
            Err(format!("`{keyword}` takes {n} counts, found {}", counts.len()))
        }
    };
    let bias = match flags.as_slice() {
        [] => true,
        ["nobias"] if matches!(keyword, "dense" | "conv2d") => false,
        _ if keyword == "residual" => true,
        other => return Err(format!("unexpected flags {other:?} for `{keyword}`")),
    };
    match keyword {
        "dense" => {
            want(2)?;
            Ok(LayerSpec::Dense {
                inputs: counts[0],
                outputs: counts[1],
                bias,
            })
        }
        "conv2d" => {
            want(4)?;
            Ok(LayerSpec::Conv2d {
                in_channels: counts[0],
                out_channels: counts[1],
                kernel_h: counts[2],
                kernel_w: counts[3],
                bias,
            })
        }
        "relu" | "flatten" => {
            want(0)?;
            if !flags.is_empty() {
                return Err(format!("`{keyword}` takes no flags"));
            }
            Ok(if keyword == "relu" {
                LayerSpec::Relu
            } else {
                LayerSpec::Flatten
            })
        }
        "residual" => {
            want(1)?;
            let skip = match flags.as_slice() {
                [] | ["skip"] => true,
                ["noskip"] => false,
                other => return Err(format!("unexpected flags {other:?} for `residual`")),
            };
            Ok(LayerSpec::ResidualBlock {
                features: counts[0],
                skip,
            })
        }
        other => Err(format!("unknown layer kind `{other}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONV: &str = "input 1 8 8\nconv2d 1 16 3 3\nrelu\nflatten\ndense 576 16\nrelu\ndense 16 4\n";

    #[test]
    fn parses_conv_model_and_counts_parameters() {
        let net: Network = CONV.parse().unwrap();
        assert_eq!(net.output_shape(), &[4]);
        assert_eq!(net.param_count(), 16 * 9 + 16 + 576 * 16 + 16 + 16 * 4 + 4);
    }

    #[test]
    fn display_round_trips() {
        let net: Network = CONV.parse().unwrap();
        let again: Network = net.to_string().parse().unwrap();
        assert_eq!(net, again);
        let res: Network = "input 4\nresidual 4 noskip\ndense 4 2 nobias\n".parse().unwrap();
        assert_eq!(res, res.to_string().parse().unwrap());
    }

    #[test]
    fn mismatch_names_layer_index() {
        let err = "input 3\ndense 3 5\nrelu\ndense 4 2\n"
            .parse::<Network>()
            .unwrap_err();
        assert!(matches!(err, ModelError::LayerShape { layer: 2, .. }), "{err}");
    }

    #[test]
    fn residual_requires_matching_features() {
        let err = Network::new(
            vec![3],
            vec![LayerSpec::ResidualBlock {
                features: 4,
                skip: true,
            }],
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::LayerShape { layer: 0, .. }));
    }

    #[test]
    fn conv_kernel_larger_than_input_is_rejected() {
        assert!("input 1 2 2\nconv2d 1 1 3 3\n".parse::<Network>().is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = "input 2\n\n# hi\nsoftmax\n".parse::<Network>().unwrap_err();
        assert_eq!(
            err,
            ModelError::Parse {
                line: 4,
                message: "unknown layer kind `softmax`".into()
            }
        );
        assert!(matches!(
            "relu\n".parse::<Network>(),
            Err(ModelError::Parse { line: 1, .. })
        ));
        assert!("".parse::<Network>().is_err());
    }

    #[test]
    fn json_form_is_validated() {
        let ok = r#"{"input_shape":[2],"layers":[{"kind":"dense","inputs":2,"outputs":1,"bias":true}]}"#;
        assert!(serde_json::from_str::<Network>(ok).is_ok());
        let bad = r#"{"input_shape":[3],"layers":[{"kind":"dense","inputs":2,"outputs":1,"bias":true}]}"#;
        assert!(serde_json::from_str::<Network>(bad).is_err());
    }
}
