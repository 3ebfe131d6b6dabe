use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::layers::{LayerCounts, LayerKind, LayerSpec};
use crate::error::{shape_err, Error, Result};
use crate::nn::{self, BatchNormConfig, BatchNormState, Conv2dParams, ConvConfig, Mode};
use crate::rng::derive_seed;
use crate::tensor::{Fill, Scalar, Tensor};

/// What a network is for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Discriminator,
    Classifier,
    Custom,
}

/// Weight initialization rule for conv and dense weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Init {
    /// `normal(0, std)` weights, `normal(1, std)` batchnorm scale.
    Normal { std: f64 },
    /// `normal(0, sqrt(2 / fan_in))`.
    He,
}

/// Serializable description of a network: everything except parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub role: Role,
    /// Per-sample input shape (without the batch axis).
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub init: Init,
}

impl Architecture {
    /// Per-sample shape after every layer, checking adjacent compatibility.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(self.layers.len() + 1);
        let mut cur = self.input.clone();
        if cur.is_empty() || cur.contains(&0) {
            return Err(shape_err!("invalid input shape {cur:?}"));
        }
        out.push(cur.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer
                .output_shape(&cur)
                .map_err(|e| shape_err!("layer {i}: {e}"))?;
            out.push(cur.clone());
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?.pop().expect("at least the input shape"))
    }

    pub fn counts(&self) -> LayerCounts {
        LayerCounts::of(&self.layers)
    }
}

/// Named parameter tensors (trainable) and buffers (running statistics).
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar = f32> {
    pub params: BTreeMap<String, Tensor<T>>,
    pub buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }

    fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing buffer {name}")))
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Replaces a trainable tensor, keeping the shape.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let old = self.param(name)?;
        if old.shape() != value.shape() {
            return Err(shape_err!(
                "parameter {name}: shape {:?}, expected {:?}",
                value.shape(),
                old.shape()
            ));
        }
        self.params
            .insert(name.to_string(), value.with_requires_grad(true));
        Ok(())
    }

    pub fn set_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let old = self.buffer(name)?;
        if old.shape() != value.shape() {
            return Err(shape_err!(
                "buffer {name}: shape {:?}, expected {:?}",
                value.shape(),
                old.shape()
            ));
        }
        self.buffers.insert(name.to_string(), value.detach());
        Ok(())
    }

    /// Bitwise equality of every parameter and buffer.
    pub fn bitwise_eq(&self, other: &ParamStore<T>) -> bool {
        fn eq<T: Scalar>(a: &BTreeMap<String, Tensor<T>>, b: &BTreeMap<String, Tensor<T>>) -> bool {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|((ka, va), (kb, vb))| ka == kb && va.bitwise_eq(vb))
        }
        eq(&self.params, &other.params) && eq(&self.buffers, &other.buffers)
    }
}

pub(crate) fn pname(layer: usize, field: &str) -> String {
    format!("layer{layer:02}.{field}")
}

/// A network: its architecture plus parameter values.
#[derive(Clone, Debug)]
pub struct NetworkSpec<T: Scalar = f32> {
    pub arch: Architecture,
    pub store: ParamStore<T>,
}

impl<T: Scalar> NetworkSpec<T> {
    /// Validates shapes and draws initial parameters from `seed`.
    pub fn initialize(arch: Architecture, seed: u64) -> Result<Self> {
        arch.shapes()?;
        let mut store = ParamStore::default();
        for (i, layer) in arch.layers.iter().enumerate() {
            let weight_fill = |fan_in: usize| match arch.init {
                Init::Normal { std } => Fill::Normal { mean: 0.0, std },
                Init::He => Fill::Normal {
                    mean: 0.0,
                    std: (2.0 / fan_in as f64).sqrt(),
                },
            };
            let mut add = |field: &str, shape: &[usize], fill: Fill| -> Result<()> {
                let name = pname(i, field);
                let t = Tensor::create(shape, fill, derive_seed(seed, &name, 0))?;
                store.params.insert(name, t.with_requires_grad(true));
                Ok(())
            };
            match layer.kind {
                LayerKind::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => {
                    add(
                        "weight",
                        &[out_ch, in_ch, kernel, kernel],
                        weight_fill(in_ch * kernel * kernel),
                    )?;
                    add("bias", &[out_ch], Fill::Constant(0.0))?;
                }
                LayerKind::ConvTranspose2d {
                    in_ch,
                    out_ch,
                    kernel,
                    bias,
                    ..
                } => {
                    add(
                        "weight",
                        &[in_ch, out_ch, kernel, kernel],
                        weight_fill(in_ch * kernel * kernel),
                    )?;
                    if bias {
                        add("bias", &[out_ch], Fill::Constant(0.0))?;
                    }
                }
                LayerKind::BatchNorm2d { channels, .. } => {
                    let gamma = match arch.init {
                        Init::Normal { std } => Fill::Normal { mean: 1.0, std },
                        Init::He => Fill::Constant(1.0),
                    };
                    add("gamma", &[channels], gamma)?;
                    add("beta", &[channels], Fill::Constant(0.0))?;
                    store.buffers.insert(
                        pname(i, "running_mean"),
                        Tensor::create(&[channels], Fill::Constant(0.0), 0)?,
                    );
                    store.buffers.insert(
                        pname(i, "running_var"),
                        Tensor::create(&[channels], Fill::Constant(1.0), 0)?,
                    );
                }
                LayerKind::Dense {
                    in_features,
                    out_features,
                } => {
                    add(
                        "weight",
                        &[in_features, out_features],
                        weight_fill(in_features),
                    )?;
                    add("bias", &[out_features], Fill::Constant(0.0))?;
                }
                LayerKind::MaxPool2d | LayerKind::Flatten | LayerKind::Reshape { .. } => {}
            }
        }
        Ok(NetworkSpec { arch, store })
    }

    /// Rebuilds a network from an architecture and stored tensors, checking
    /// that every expected tensor is present with the right shape.
    pub fn from_parts(arch: Architecture, store: ParamStore<T>) -> Result<Self> {
        let template = NetworkSpec::<T>::initialize(arch.clone(), 0)?;
        for (kind, want, have) in [
            ("parameter", &template.store.params, &store.params),
            ("buffer", &template.store.buffers, &store.buffers),
        ] {
            if want.len() != have.len() {
                return Err(Error::InvalidArgument(format!(
                    "expected {} {kind}s, found {}",
                    want.len(),
                    have.len()
                )));
            }
            for (name, t) in want {
                let got = have
                    .get(name)
                    .ok_or_else(|| Error::InvalidArgument(format!("missing {kind} {name}")))?;
                if got.shape() != t.shape() {
                    return Err(shape_err!(
                        "{kind} {name}: shape {:?}, expected {:?}",
                        got.shape(),
                        t.shape()
                    ));
                }
            }
        }
        let mut store = store;
        for t in store.params.values_mut() {
            *t = t.with_requires_grad(true);
        }
        Ok(NetworkSpec { arch, store })
    }

    pub fn counts(&self) -> LayerCounts {
        self.arch.counts()
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.arch.input
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        self.arch.output_shape()
    }

    /// Applies the layers in order to `batch: [n, ...input]`.
    ///
    /// Train mode normalizes with batch statistics and updates running
    /// statistics; eval mode uses the stored ones. When `track_params` is
    /// false the parameters enter the graph as constants, so no weight
    /// gradients are produced (gradients still flow to `batch`).
    pub fn forward_with(
        &mut self,
        batch: &Tensor<T>,
        mode: Mode,
        track_params: bool,
    ) -> Result<Tensor<T>> {
        if batch.rank() != self.arch.input.len() + 1 || batch.shape()[1..] != self.arch.input[..] {
            return Err(shape_err!(
                "batch shape {:?} does not match network input [n, {:?}]",
                batch.shape(),
                self.arch.input
            ));
        }
        let n = batch.shape()[0];
        let p = |store: &ParamStore<T>, i: usize, field: &str| -> Result<Tensor<T>> {
            let t = store.param(&pname(i, field))?;
            Ok(if track_params { t.clone() } else { t.detach() })
        };
        let mut x = batch.clone();
        for (i, layer) in self.arch.layers.iter().enumerate() {
            x = match layer.kind {
                LayerKind::Conv2d {
                    stride, padding, ..
                } => nn::conv2d(
                    &x,
                    &Conv2dParams {
                        weight: p(&self.store, i, "weight")?,
                        bias: p(&self.store, i, "bias")?,
                        config: ConvConfig { stride, padding },
                    },
                )?,
                LayerKind::ConvTranspose2d {
                    stride,
                    padding,
                    bias,
                    ..
                } => {
                    let y = nn::conv_transpose2d(
                        &x,
                        &p(&self.store, i, "weight")?,
                        ConvConfig { stride, padding },
                    )?;
                    if bias {
                        nn::add_channel_bias(&y, &p(&self.store, i, "bias")?)?
                    } else {
                        y
                    }
                }
                LayerKind::BatchNorm2d { momentum, eps, .. } => {
                    let (rm, rv) = (pname(i, "running_mean"), pname(i, "running_var"));
                    let mut state = BatchNormState {
                        gamma: p(&self.store, i, "gamma")?,
                        beta: p(&self.store, i, "beta")?,
                        running_mean: self.store.buffer(&rm)?.clone(),
                        running_var: self.store.buffer(&rv)?.clone(),
                        config: BatchNormConfig { momentum, eps },
                    };
                    let y = nn::batchnorm2d(&x, &mut state, mode)?;
                    if mode == Mode::Train {
                        self.store.buffers.insert(rm, state.running_mean);
                        self.store.buffers.insert(rv, state.running_var);
                    }
                    y
                }
                LayerKind::MaxPool2d => nn::maxpool2d(&x)?,
                LayerKind::Flatten => x.flatten()?,
                LayerKind::Dense { .. } => nn::dense(
                    &x,
                    &p(&self.store, i, "weight")?,
                    &p(&self.store, i, "bias")?,
                )?,
                LayerKind::Reshape { ref shape } => {
                    let mut full = vec![n];
                    full.extend_from_slice(shape);
                    x.reshape(&full)?
                }
            };
            x = layer.activation.apply(x);
        }
        Ok(x)
    }

    /// [`forward_with`](Self::forward_with) with parameters tracked.
    pub fn forward(&mut self, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.forward_with(batch, mode, true)
    }

    /// Eval-mode forward without any graph recording.
    pub fn predict(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self
            .forward_with(&batch.detach(), Mode::Eval, false)?
            .detach())
    }
}
