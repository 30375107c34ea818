//! Pixelwise implicit-neural-representation denoiser.

mod activation;
mod codec;
mod model;

pub use activation::{phi, phi_derivative, Activation, PhiParams};
pub use codec::{decode as decode_model, encode as encode_model, load_model, save_model};
pub use model::{apply_denoiser, build_model, pixel_features, DenoiserModel, Layer, ModelConfig};
