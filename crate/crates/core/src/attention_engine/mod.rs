//! Inflated self-attention, cross-attention, source injection and the toy
//! noise-prediction backbone that hosts them.

mod attention;
mod backbone;
mod policy;
mod text;

pub use attention::{
    attend, concat_rows, cross_attention, inflated_self_attention, AttentionKind,
    AttentionLayerSpec, AttentionOutput,
};
pub use backbone::{
    AttentionDump, BackboneConfig, Controls, ConvBlock, ForwardDiagnostics, ForwardOutput,
    GuidedPredictor, ModulationInputs, Range, ToyUnet, BRANCH_COND, BRANCH_UNCOND,
};
pub use policy::{apply_injection_policy, InjectionPolicy};
pub use text::{tokenize, toy_text_embed, TextEmbedding};
