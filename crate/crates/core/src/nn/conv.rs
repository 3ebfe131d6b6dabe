use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::kernels::{self, ConvGeom};
use crate::tensor::{Scalar, Tensor};

/// Stride and zero padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub stride: usize,
    pub padding: usize,
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig {
            stride: 1,
            padding: 0,
        }
    }
}

/// Weights and geometry of a conv layer.
#[derive(Clone, Debug)]
pub struct Conv2dParams<T: Scalar = f32> {
    /// `[out_ch, in_ch, kh, kw]`
    pub weight: Tensor<T>,
    /// `[out_ch]`
    pub bias: Tensor<T>,
    pub config: ConvConfig,
}

/// Output extent of a strided window: `floor((len + 2p - k) / s) + 1`.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(shape_err!("kernel and stride must be >= 1"));
    }
    let padded = len + 2 * padding;
    if padded < kernel {
        return Err(shape_err!(
            "kernel {kernel} larger than padded input {padded}"
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution: `(len - 1)·s - 2p + k`.
pub fn conv_transpose_out_len(
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(shape_err!("kernel and stride must be >= 1"));
    }
    let full = (len - 1) * stride + kernel;
    if full <= 2 * padding {
        return Err(shape_err!(
            "transposed conv output would be {} <= 0",
            full as isize - 2 * padding as isize
        ));
    }
    Ok(full - 2 * padding)
}

fn nchw(x: &[usize], what: &str) -> Result<[usize; 4]> {
    x.try_into()
        .map_err(|_| shape_err!("{what} expects [n, c, h, w], got {x:?}"))
}

/// Cross-correlation of `[n, c, h, w]` with `weight: [oc, c, kh, kw]`, plus
/// a per-channel bias.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, params: &Conv2dParams<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = nchw(input.shape(), "conv2d input")?;
    let [oc, ic, kh, kw] = nchw(params.weight.shape(), "conv2d weight")?;
    if c != ic {
        return Err(shape_err!(
            "conv2d: input has {c} channels, weight expects {ic}"
        ));
    }
    if params.bias.shape() != [oc] {
        return Err(shape_err!(
            "conv2d bias shape {:?}, expected [{oc}]",
            params.bias.shape()
        ));
    }
    let ConvConfig { stride, padding } = params.config;
    let g = ConvGeom {
        n,
        c_in: c,
        h,
        w,
        c_out: oc,
        kh,
        kw,
        stride,
        pad: padding,
        oh: conv_out_len(h, kh, stride, padding)?,
        ow: conv_out_len(w, kw, stride, padding)?,
    };
    let mut y = kernels::conv_forward(&g, input.data(), params.weight.data());
    let pos = g.positions();
    let bias = params.bias.data();
    for (i, chunk) in y.chunks_mut(pos).enumerate() {
        let b = bias[i % oc];
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }

    let (x, wt) = (input.clone(), params.weight.clone());
    let backward = Box::new(move |gy: &[T], needs: &[bool]| {
        let dx = needs[0].then(|| kernels::conv_input_grad(&g, gy, wt.data()));
        let dw = needs[1].then(|| kernels::conv_weight_grad(&g, x.data(), gy));
        let db = needs[2].then(|| channel_sums(gy, g.n, g.c_out, pos));
        vec![dx, dw, db]
    });
    Ok(Tensor::from_op(
        y,
        vec![n, oc, g.oh, g.ow],
        vec![input.clone(), params.weight.clone(), params.bias.clone()],
        backward,
    ))
}

/// Transposed convolution of `[n, c, h, w]` with `weight: [c, oc, kh, kw]`.
/// Its forward pass is the input-adjoint of [`conv2d`] with the same weight.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    config: ConvConfig,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = nchw(input.shape(), "conv_transpose2d input")?;
    let [wc, oc, kh, kw] = nchw(weight.shape(), "conv_transpose2d weight")?;
    if c != wc {
        return Err(shape_err!(
            "conv_transpose2d: input has {c} channels, weight expects {wc}"
        ));
    }
    let ConvConfig { stride, padding } = config;
    let out_h = conv_transpose_out_len(h, kh, stride, padding)?;
    let out_w = conv_transpose_out_len(w, kw, stride, padding)?;
    // The conv that maps [oc, out_h, out_w] back to [c, h, w].
    let g = ConvGeom {
        n,
        c_in: oc,
        h: out_h,
        w: out_w,
        c_out: c,
        kh,
        kw,
        stride,
        pad: padding,
        oh: h,
        ow: w,
    };
    if conv_out_len(out_h, kh, stride, padding)? != h
        || conv_out_len(out_w, kw, stride, padding)? != w
    {
        return Err(shape_err!("conv_transpose2d geometry is not invertible"));
    }
    let y = kernels::conv_input_grad(&g, input.data(), weight.data());

    let (x, wt) = (input.clone(), weight.clone());
    let backward = Box::new(move |gy: &[T], needs: &[bool]| {
        let dx = needs[0].then(|| kernels::conv_forward(&g, gy, wt.data()));
        let dw = needs[1].then(|| kernels::conv_weight_grad(&g, gy, x.data()));
        vec![dx, dw]
    });
    Ok(Tensor::from_op(
        y,
        vec![n, oc, out_h, out_w],
        vec![input.clone(), weight.clone()],
        backward,
    ))
}

fn channel_sums<T: Scalar>(g: &[T], n: usize, c: usize, pos: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for s in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let base = (s * c + ch) * pos;
            *o = g[base..base + pos].iter().fold(*o, |a, &v| a + v);
        }
    }
    out
}

/// Adds `bias: [c]` to every spatial position of `[n, c, h, w]`.
pub fn add_channel_bias<T: Scalar>(input: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = nchw(input.shape(), "channel bias input")?;
    if bias.shape() != [c] {
        return Err(shape_err!("bias shape {:?}, expected [{c}]", bias.shape()));
    }
    let pos = h * w;
    let b = bias.data();
    let data: Vec<T> = input
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + b[(i / pos) % c])
        .collect();
    let backward = Box::new(move |g: &[T], needs: &[bool]| {
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| channel_sums(g, n, c, pos)),
        ]
    });
    Ok(Tensor::from_op(
        data,
        input.shape().to_vec(),
        vec![input.clone(), bias.clone()],
        backward,
    ))
}
