//! Zero-shot multi-attribute video editing on a seeded toy diffusion backbone.

pub mod attention_engine;
pub mod error;
pub mod latent_codec;
pub mod modulation;
pub mod numerics;
pub mod pipeline;
pub mod propagation;

pub use error::{Error, Result};
