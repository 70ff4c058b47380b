//! Differentiable building blocks on top of `candle_core` tensors.
//!
//! Everything here is composed from primitive tensor ops so that reverse
//! mode autodiff covers the whole network in both `f32` and `f64`.

mod attention;
mod layers;
mod lstm;
pub mod ops;
mod optim;
mod params;
mod transformer;

pub use attention::{causal_mask, padding_mask, MultiHeadAttention};
pub use layers::{Ctx, FeedForward, LayerNorm, Linear};
pub use lstm::{BiLstm, Lstm};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use params::{Init, ParamGroup};
pub(crate) use params::hex;
pub use transformer::{CrossDecoderBlock, EncoderBlock};
