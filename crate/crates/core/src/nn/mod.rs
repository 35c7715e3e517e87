//! Minimal dense layers with explicit forward caches and backward passes.

pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod params;
pub mod transformer;

pub use init::{xavier_normal, InitError};
pub use layers::{gelu, gelu_derivative, LayerNorm, Linear};
pub use params::Params;
pub use transformer::{MultiHeadAttention, TransformerBlock, TransformerStack};
