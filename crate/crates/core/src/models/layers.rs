use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::nn::{conv_out_len, conv_transpose_out_len};
use crate::tensor::{Scalar, Tensor};

/// Pointwise nonlinearity applied after a layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    LeakyRelu {
        alpha: f64,
    },
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.relu(),
            Activation::LeakyRelu { alpha } => x.leaky_relu(alpha),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
        }
    }
}

/// Operation of one layer, with the shape parameters needed to build and
/// check it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    BatchNorm2d {
        channels: usize,
        momentum: f64,
        eps: f64,
    },
    MaxPool2d,
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
    /// Reshapes each sample to `shape` (batch axis kept).
    Reshape {
        shape: Vec<usize>,
    },
}

/// One entry in a network's ordered layer list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default)]
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, activation: Activation) -> Self {
        LayerSpec { kind, activation }
    }

    pub fn plain(kind: LayerKind) -> Self {
        LayerSpec::new(kind, Activation::Identity)
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let chw = |what: &str| -> Result<[usize; 3]> {
            input
                .try_into()
                .map_err(|_| shape_err!("{what} expects [c, h, w] samples, got {input:?}"))
        };
        match &self.kind {
            &LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = chw("conv2d")?;
                if c != in_ch {
                    return Err(shape_err!("conv2d expects {in_ch} channels, got {c}"));
                }
                Ok(vec![
                    out_ch,
                    conv_out_len(h, kernel, stride, padding)?,
                    conv_out_len(w, kernel, stride, padding)?,
                ])
            }
            &LayerKind::ConvTranspose2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
                ..
            } => {
                let [c, h, w] = chw("conv_transpose2d")?;
                if c != in_ch {
                    return Err(shape_err!(
                        "conv_transpose2d expects {in_ch} channels, got {c}"
                    ));
                }
                Ok(vec![
                    out_ch,
                    conv_transpose_out_len(h, kernel, stride, padding)?,
                    conv_transpose_out_len(w, kernel, stride, padding)?,
                ])
            }
            &LayerKind::BatchNorm2d { channels, .. } => {
                let [c, _, _] = chw("batchnorm2d")?;
                if c != channels {
                    return Err(shape_err!(
                        "batchnorm2d expects {channels} channels, got {c}"
                    ));
                }
                Ok(input.to_vec())
            }
            LayerKind::MaxPool2d => {
                let [c, h, w] = chw("maxpool2d")?;
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(shape_err!("maxpool2d needs even spatial dims, got {h}x{w}"));
                }
                Ok(vec![c, h / 2, w / 2])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            &LayerKind::Dense {
                in_features,
                out_features,
            } => match input {
                [k] if *k == in_features => Ok(vec![out_features]),
                _ => Err(shape_err!(
                    "dense expects [{in_features}] samples, got {input:?}"
                )),
            },
            LayerKind::Reshape { shape } => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err(shape_err!("cannot reshape {input:?} into {shape:?}"));
                }
                Ok(shape.clone())
            }
        }
    }
}

/// Number of layers of each counted kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCounts {
    pub conv2d: usize,
    pub maxpool: usize,
    pub flatten: usize,
    pub dense: usize,
}

impl LayerCounts {
    pub fn of(layers: &[LayerSpec]) -> Self {
        let mut c = LayerCounts::default();
        for l in layers {
            match l.kind {
                LayerKind::Conv2d { .. } => c.conv2d += 1,
                LayerKind::MaxPool2d => c.maxpool += 1,
                LayerKind::Flatten => c.flatten += 1,
                LayerKind::Dense { .. } => c.dense += 1,
                _ => {}
            }
        }
        c
    }
}
