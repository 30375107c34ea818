//! Single-shot plug-and-play image restoration.
//!
//! A small pixelwise MLP is trained on the degraded observation alone and
//! then used as the denoising step inside a PnP-ADMM loop that solves
//! deconvolution, super-resolution, and joint demosaicing + deconvolution.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod config;
pub mod error;
pub mod experiment;
pub mod image;
pub mod inr;
pub mod io;
pub mod metrics;
pub mod ndgrad;
pub mod operators;
pub mod prox;
pub mod train;

pub use error::{Error, Result};
pub use image::Image;
