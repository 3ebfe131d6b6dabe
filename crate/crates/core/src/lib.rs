//! Synthetic presentation-attack generation and detection.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]),
//! differentiable layers ([`nn`]), network builders for a DCGAN pair and a
//! 14-conv VGG-style binary classifier ([`models`]), training loops
//! ([`train`]), dataset and checkpoint I/O ([`data`]) and binary
//! classification metrics ([`eval`]).

pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{backward, DType, Fill, GradientMap, Scalar, Tensor, TensorId};
