//! Differentiable layer primitives.

mod batchnorm;
mod conv;
mod dense;
mod loss;
mod pool;

pub use batchnorm::{batchnorm2d, BatchNormConfig, BatchNormState, Mode};
pub use conv::{
    add_channel_bias, conv2d, conv_out_len, conv_transpose2d, conv_transpose_out_len, Conv2dParams,
    ConvConfig,
};
pub use dense::dense;
pub use loss::{bce_loss, BCE_EPS};
pub use pool::maxpool2d;
