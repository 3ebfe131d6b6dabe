//! Network descriptions, builders and the generic forward pass.

mod builders;
mod layers;
mod network;

pub use builders::{
    build_dcgan_discriminator, build_dcgan_generator, build_modified_vggnet, check_gan_pair,
    dcgan_discriminator_arch, dcgan_generator_arch, modified_vggnet_arch, vgg_width, ImageShape,
    LatentSpec, DCGAN_INIT_STD, DISCRIMINATOR_BASE, GENERATOR_BASE, LEAKY_SLOPE, VGG_BLOCKS,
};
pub use layers::{Activation, LayerCounts, LayerKind, LayerSpec};
pub use network::{Architecture, Init, NetworkSpec, ParamStore, Role};

#[cfg(test)]
mod tests;
