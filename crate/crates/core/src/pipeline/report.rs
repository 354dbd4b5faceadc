use std::fmt::Write as _;

use crate::attention_engine::Range;
use crate::propagation::SigmaMode;

use super::config::{Component, Profile};
use super::metrics::Metrics;

pub const RUNTIME_KEY: &str = "runtime_seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub timestep: usize,
    /// Keyframes used this step; every frame when propagation is off.
    pub keyframes: Vec<usize>,
    pub alpha_self: Range,
    pub alpha_cross: Range,
    pub blends: usize,
    pub weight_fallbacks: usize,
    pub copy_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditReport {
    pub metrics: Metrics,
    /// Wall-clock seconds for inversion plus denoising.
    pub runtime_seconds: f64,
    pub frames: usize,
    /// `[N, C, h, w]` of the edited latents.
    pub latent_shape: Vec<usize>,
    pub sample_steps: usize,
    pub seed: u64,
    pub sigma: SigmaMode,
    pub profile: Profile,
    pub disabled: Vec<Component>,
    pub source_prompt: String,
    pub target_prompt: String,
    /// Mean per-frame L2 distance between edited and source latents.
    pub source_distance: f64,
    /// Masked-area fraction `ω` per attribute and frame at latent resolution.
    pub omega: Vec<Vec<f32>>,
    /// `(attribute, frame)` masks with no foreground at latent resolution.
    pub empty_masks: usize,
    pub nonbinary_mask_pixels: usize,
    /// Frames copied from a lone keyframe, summed over steps and layers.
    pub copy_fallbacks: usize,
    /// Blends whose similarity ratio degenerated to the temporal weight.
    pub weight_fallbacks: usize,
    pub steps: Vec<StepDiagnostics>,
}

fn range(r: &Range) -> String {
    if r.count == 0 {
        "none".into()
    } else {
        format!("{:.9} {:.9}", r.min, r.max)
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

impl EditReport {
    /// One `key=value` per line, after a `#` header.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        let m = &self.metrics;
        kv("clip_t_like", format!("{:.9}", m.clip_t_like));
        kv("clip_f_like", format!("{:.9}", m.clip_f_like));
        kv("clip_f_single_frame", m.clip_f_single_frame.to_string());
        kv("frame_acc_like", format!("{:.9}", m.frame_acc_like));
        kv(RUNTIME_KEY, format!("{:.3}", self.runtime_seconds));
        kv("frames", self.frames.to_string());
        kv("latent_shape", join(&self.latent_shape));
        kv("sample_steps", self.sample_steps.to_string());
        kv("seed", self.seed.to_string());
        kv("sigma", self.sigma.to_string());
        kv("profile", self.profile.to_string());
        kv("disabled", join(&self.disabled));
        kv("source_prompt", self.source_prompt.clone());
        kv("target_prompt", self.target_prompt.clone());
        kv("source_distance", format!("{:.9}", self.source_distance));
        for (a, om) in self.omega.iter().enumerate() {
            let vals: Vec<String> = om.iter().map(|w| format!("{w:.6}")).collect();
            kv(&format!("omega.{a}"), vals.join(" "));
        }
        kv("empty_masks", self.empty_masks.to_string());
        kv(
            "nonbinary_mask_pixels",
            self.nonbinary_mask_pixels.to_string(),
        );
        kv("copy_fallbacks", self.copy_fallbacks.to_string());
        kv("weight_fallbacks", self.weight_fallbacks.to_string());
        for d in &self.steps {
            let p = format!("step.{}", d.step);
            kv(&format!("{p}.t"), d.timestep.to_string());
            kv(&format!("{p}.keyframes"), join(&d.keyframes));
            kv(&format!("{p}.alpha_self"), range(&d.alpha_self));
            kv(&format!("{p}.alpha_cross"), range(&d.alpha_cross));
            kv(&format!("{p}.blends"), d.blends.to_string());
            kv(
                &format!("{p}.weight_fallbacks"),
                d.weight_fallbacks.to_string(),
            );
            kv(&format!("{p}.copy_fallbacks"), d.copy_fallbacks.to_string());
        }
        format!(
            "# runtime covers DDIM inversion and denoising only\n\
             # metrics use a seeded toy embedder and are not CLIP scores\n{s}"
        )
    }
}

/// `key=value` pairs of a report text, skipping comments.
pub fn parse_report(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
