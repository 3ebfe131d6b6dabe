use serde::{Deserialize, Serialize};

use super::layers::{Activation, LayerKind, LayerSpec};
use super::network::{Architecture, Init, NetworkSpec, Role};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Scalar;

/// Channels and spatial size of one image sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        ImageShape {
            channels,
            height,
            width,
        }
    }

    pub fn square(channels: usize, side: usize) -> Self {
        ImageShape::new(channels, side, side)
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        match dims {
            &[c, h, w] => Ok(ImageShape::new(c, h, w)),
            _ => Err(shape_err!("expected [c, h, w], got {dims:?}")),
        }
    }
}

/// Size of the generator's noise input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub z_dim: usize,
}

impl Default for LatentSpec {
    fn default() -> Self {
        LatentSpec { z_dim: 100 }
    }
}

/// Base (unscaled) channel widths of the five classifier conv blocks.
pub const VGG_BLOCKS: [&[usize]; 5] = [
    &[64, 64],
    &[128, 128],
    &[256, 256, 256],
    &[512, 512, 512],
    &[512, 512, 512, 512],
];

/// Generator channels at 4×4 and discriminator channels after the first conv.
pub const GENERATOR_BASE: usize = 512;
pub const DISCRIMINATOR_BASE: usize = 64;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const DCGAN_INIT_STD: f64 = 0.02;

fn scaled(base: usize, scale: f64) -> usize {
    ((base as f64 * scale).round() as usize).max(1)
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "width scale must be positive, got {scale}"
        )));
    }
    Ok(())
}

/// Channel count at block `b` (0-based) for a given width scale.
pub fn vgg_width(block: usize, scale: f64) -> usize {
    scaled(VGG_BLOCKS[block][0], scale)
}

/// The 14-conv, 5-pool, 1-flatten, 2-dense binary classifier with a sigmoid
/// head. Convs are 3×3, stride 1, padding 1 with ReLU; a 2×2 max-pool closes
/// each block.
pub fn modified_vggnet_arch(
    input: ImageShape,
    width_scale: f64,
    head_units: usize,
) -> Result<Architecture> {
    check_scale(width_scale)?;
    if head_units == 0 {
        return Err(Error::InvalidArgument("head_units must be >= 1".into()));
    }
    if input.channels == 0 || input.height == 0 || input.width == 0 {
        return Err(shape_err!("empty input {input:?}"));
    }
    if !input.height.is_multiple_of(32) || !input.width.is_multiple_of(32) {
        return Err(shape_err!(
            "classifier input {}x{} must be divisible by 32",
            input.height,
            input.width
        ));
    }
    let mut layers = Vec::new();
    let mut ch = input.channels;
    for block in VGG_BLOCKS {
        for &base in block {
            let out = scaled(base, width_scale);
            layers.push(LayerSpec::new(
                LayerKind::Conv2d {
                    in_ch: ch,
                    out_ch: out,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                Activation::Relu,
            ));
            ch = out;
        }
        layers.push(LayerSpec::plain(LayerKind::MaxPool2d));
    }
    let flat = ch * (input.height / 32) * (input.width / 32);
    layers.push(LayerSpec::plain(LayerKind::Flatten));
    layers.push(LayerSpec::new(
        LayerKind::Dense {
            in_features: flat,
            out_features: head_units,
        },
        Activation::Relu,
    ));
    layers.push(LayerSpec::new(
        LayerKind::Dense {
            in_features: head_units,
            out_features: 1,
        },
        Activation::Sigmoid,
    ));
    let arch = Architecture {
        role: Role::Classifier,
        input: input.dims(),
        layers,
        init: Init::He,
    };
    arch.shapes()?;
    Ok(arch)
}

pub fn build_modified_vggnet<T: Scalar>(
    input: ImageShape,
    width_scale: f64,
    head_units: usize,
    seed: u64,
) -> Result<NetworkSpec<T>> {
    NetworkSpec::initialize(modified_vggnet_arch(input, width_scale, head_units)?, seed)
}

fn check_gan_resolution(shape: ImageShape) -> Result<()> {
    if shape.channels == 0 {
        return Err(shape_err!("image needs at least one channel"));
    }
    if shape.height != shape.width {
        return Err(shape_err!(
            "GAN images must be square, got {}x{}",
            shape.height,
            shape.width
        ));
    }
    if shape.height < 16 || !shape.height.is_power_of_two() {
        return Err(shape_err!(
            "GAN resolution must be a power of two >= 16, got {}",
            shape.height
        ));
    }
    Ok(())
}

/// DCGAN generator: dense projection of `z` to `base×4×4`, then stride-2
/// transposed convs (k=4, p=1) halving channels and doubling resolution.
/// Hidden layers use batchnorm + ReLU; the output layer uses tanh.
pub fn dcgan_generator_arch(
    latent: LatentSpec,
    out: ImageShape,
    width_scale: f64,
) -> Result<Architecture> {
    check_scale(width_scale)?;
    check_gan_resolution(out)?;
    if latent.z_dim == 0 {
        return Err(Error::InvalidArgument("z_dim must be >= 1".into()));
    }
    let bn = |channels| LayerKind::BatchNorm2d {
        channels,
        momentum: 0.1,
        eps: 1e-5,
    };
    let mut ch = scaled(GENERATOR_BASE, width_scale);
    let mut layers = vec![
        LayerSpec::plain(LayerKind::Dense {
            in_features: latent.z_dim,
            out_features: ch * 16,
        }),
        LayerSpec::plain(LayerKind::Reshape {
            shape: vec![ch, 4, 4],
        }),
        LayerSpec::new(bn(ch), Activation::Relu),
    ];
    let mut side = 4;
    while side < out.height {
        side *= 2;
        if side == out.height {
            layers.push(LayerSpec::new(
                LayerKind::ConvTranspose2d {
                    in_ch: ch,
                    out_ch: out.channels,
                    kernel: 4,
                    stride: 2,
                    padding: 1,
                    bias: true,
                },
                Activation::Tanh,
            ));
        } else {
            let next = (ch / 2).max(1);
            layers.push(LayerSpec::plain(LayerKind::ConvTranspose2d {
                in_ch: ch,
                out_ch: next,
                kernel: 4,
                stride: 2,
                padding: 1,
                bias: false,
            }));
            layers.push(LayerSpec::new(bn(next), Activation::Relu));
            ch = next;
        }
    }
    let arch = Architecture {
        role: Role::Generator,
        input: vec![latent.z_dim],
        layers,
        init: Init::Normal {
            std: DCGAN_INIT_STD,
        },
    };
    arch.shapes()?;
    Ok(arch)
}

pub fn build_dcgan_generator<T: Scalar>(
    latent: LatentSpec,
    out: ImageShape,
    width_scale: f64,
    seed: u64,
) -> Result<NetworkSpec<T>> {
    NetworkSpec::initialize(dcgan_generator_arch(latent, out, width_scale)?, seed)
}

/// DCGAN discriminator: stride-2 convs (k=4, p=1) doubling channels down to
/// 4×4, LeakyReLU(0.2) throughout, batchnorm on all but the first conv, and a
/// final 4×4 valid conv to one sigmoid score.
pub fn dcgan_discriminator_arch(input: ImageShape, width_scale: f64) -> Result<Architecture> {
    check_scale(width_scale)?;
    check_gan_resolution(input)?;
    let leaky = Activation::LeakyRelu { alpha: LEAKY_SLOPE };
    let mut ch = scaled(DISCRIMINATOR_BASE, width_scale);
    let mut layers = vec![LayerSpec::new(
        LayerKind::Conv2d {
            in_ch: input.channels,
            out_ch: ch,
            kernel: 4,
            stride: 2,
            padding: 1,
        },
        leaky,
    )];
    let mut side = input.height / 2;
    while side > 4 {
        let next = ch * 2;
        layers.push(LayerSpec::plain(LayerKind::Conv2d {
            in_ch: ch,
            out_ch: next,
            kernel: 4,
            stride: 2,
            padding: 1,
        }));
        layers.push(LayerSpec::new(
            LayerKind::BatchNorm2d {
                channels: next,
                momentum: 0.1,
                eps: 1e-5,
            },
            leaky,
        ));
        ch = next;
        side /= 2;
    }
    layers.push(LayerSpec::plain(LayerKind::Conv2d {
        in_ch: ch,
        out_ch: 1,
        kernel: 4,
        stride: 1,
        padding: 0,
    }));
    layers.push(LayerSpec::new(LayerKind::Flatten, Activation::Sigmoid));
    let arch = Architecture {
        role: Role::Discriminator,
        input: input.dims(),
        layers,
        init: Init::Normal {
            std: DCGAN_INIT_STD,
        },
    };
    arch.shapes()?;
    Ok(arch)
}

pub fn build_dcgan_discriminator<T: Scalar>(
    input: ImageShape,
    width_scale: f64,
    seed: u64,
) -> Result<NetworkSpec<T>> {
    NetworkSpec::initialize(dcgan_discriminator_arch(input, width_scale)?, seed)
}

/// Checks that the discriminator accepts exactly the generator's output.
pub fn check_gan_pair(generator: &Architecture, discriminator: &Architecture) -> Result<()> {
    let out = generator.output_shape()?;
    if out != discriminator.input {
        return Err(shape_err!(
            "generator emits {out:?} but discriminator expects {:?}",
            discriminator.input
        ));
    }
    Ok(())
}
