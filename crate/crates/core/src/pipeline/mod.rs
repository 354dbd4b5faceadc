//! End-to-end edit: configuration, mask ingestion, inversion, guided
//! denoising, metrics and artifact output.

mod artifacts;
mod config;
mod manifest;
mod metrics;
mod report;
mod run;

pub use artifacts::{
    emit_artifacts, encode_attention, write_atomic, ATTENTION_DIR, ATTENTION_MAGIC, KEYFRAMES_FILE,
    LATENTS_FILE, REPORT_FILE,
};
pub use config::{AttributeEdit, Component, EditConfig, Profile};
pub use manifest::{fit_video, load_frames, load_manifest, load_mask, EditInputs, Manifest};
pub use metrics::{metric_suite, Embedder, Metrics, ToyEmbedder, TOY_EMBED_DIM};
pub use report::{parse_report, EditReport, StepDiagnostics, RUNTIME_KEY};
pub use run::{run_edit, Denoised, EditOutcome, Editor, LATENT_CHANNELS, NULL_PROMPT};
