//! Restoration of grid-sparse scanning-microscopy images.
//!
//! A from-scratch float32 autodiff core drives an SE-residual convolutional
//! network that maps a 1/4 or 1/16 sampled image back to full resolution. The
//! crate also carries the bicubic baseline, PSNR/SSIM metrics, a frozen
//! feature network for the perceptual loss, Adam training and a bit-exact
//! named-tensor checkpoint format.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod interp;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Gradients, Graph, Padding, Tensor, Var};
