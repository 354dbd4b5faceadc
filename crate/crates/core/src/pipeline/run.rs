use std::time::Instant;

use crate::attention_engine::{
    tokenize, toy_text_embed, AttentionDump, BackboneConfig, Controls, GuidedPredictor,
    InjectionPolicy, ModulationInputs, TextEmbedding, ToyUnet, BRANCH_COND, BRANCH_UNCOND,
};
use crate::error::{Error, Result};
use crate::latent_codec::{
    cfg_combine, ddim_invert, ddim_sample, encode_frames, make_schedule, Inversion, LatentVideo,
    Schedule,
};
use crate::modulation::{mask_area_ratio, MaskSet, ModulationConfig};
use crate::numerics::derive_seed;
use crate::propagation::{
    diversity_ranking, per_step_keyframe_rotation, KeyframePlan, StepKeyframes,
};

use super::config::{Component, EditConfig};
use super::manifest::{fit_video, EditInputs};
use super::metrics::{metric_suite, Embedder, ToyEmbedder};
use super::report::{EditReport, StepDiagnostics};

/// Token used as the unconditional prompt.
pub const NULL_PROMPT: &str = "<null>";
pub const LATENT_CHANNELS: usize = 16;

/// A prepared edit job: encoded source, backbone, prompts and masks.
#[derive(Debug, Clone)]
pub struct Editor {
    config: EditConfig,
    policy: InjectionPolicy,
    modulation: ModulationConfig,
    schedule: Schedule,
    unet: ToyUnet,
    masks: MaskSet,
    source_latents: LatentVideo,
    uncond: TextEmbedding,
    source_text: TextEmbedding,
    target_text: TextEmbedding,
    /// Frames in keyframe priority order; `None` when every frame is a
    /// keyframe at every step.
    ranking: Option<Vec<usize>>,
    nonbinary_mask_pixels: usize,
}

/// Result of the sampling pass.
#[derive(Debug, Clone)]
pub struct Denoised {
    pub edited: LatentVideo,
    pub plan: KeyframePlan,
    pub steps: Vec<StepDiagnostics>,
    /// Conditional-branch attention scores per step, when dumping.
    pub attention: Vec<(usize, Vec<AttentionDump>)>,
}

#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub source: LatentVideo,
    pub edited: LatentVideo,
    pub report: EditReport,
    pub plan: KeyframePlan,
    pub attention: Vec<(usize, Vec<AttentionDump>)>,
}

impl Editor {
    pub fn new(config: &EditConfig, inputs: &EditInputs) -> Result<Self> {
        config.validate()?;
        let profile = config.profile;
        let seed = config.seed;
        let video = fit_video(&inputs.video, profile.max_side(), profile.patch())?;
        let source_latents = encode_frames(&video, profile.patch(), LATENT_CHANNELS, seed)?;
        let (h, w) = (source_latents.height(), source_latents.width());
        if inputs.masks.frames() != video.frames {
            return Err(Error::Manifest(format!(
                "{} frames but masks for {}",
                video.frames,
                inputs.masks.frames()
            )));
        }
        let backbone = BackboneConfig {
            latent_channels: LATENT_CHANNELS,
            seed: derive_seed(seed, "backbone"),
            ..BackboneConfig::default()
        };
        let unet = ToyUnet::new(backbone, h, w).map_err(|e| match e {
            Error::Shape(msg) => Error::Config(msg),
            other => other,
        })?;
        let mut masks = inputs.masks.clone();
        for (rh, rw) in unet.resolutions() {
            masks.prepare(rh, rw)?;
        }

        let text_seed = derive_seed(seed, "text");
        let embed = |tokens: &[String]| toy_text_embed(tokens, text_seed, backbone.text_dim);
        let target_tokens = config.target_tokens()?;
        let target_text = embed(&target_tokens)?;
        let spans = inputs
            .attribute_spans
            .iter()
            .map(|span| {
                target_text.find_phrase(span).ok_or_else(|| {
                    Error::Config(format!(
                        "attribute span {span:?} not found in target prompt {:?}",
                        target_tokens.join(" ")
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if spans.len() != masks.attributes() {
            return Err(Error::Manifest(format!(
                "{} attribute spans for {} mask attributes",
                spans.len(),
                masks.attributes()
            )));
        }
        let target_text = target_text.with_spans(spans)?;
        let source_text = embed(&tokenize(&config.source_prompt))?;
        let source_spans = config
            .edits
            .iter()
            .map(|e| {
                source_text.find_phrase(&e.source).ok_or_else(|| {
                    Error::Config(format!(
                        "edit source {:?} not in the source prompt",
                        e.source
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let source_text = source_text.with_spans(source_spans)?;

        let n = video.frames;
        let count = config.keyframes_per_step;
        let ranking = if config.enabled(Component::Propagation) && count < n {
            let features: Vec<Vec<f32>> = (0..n)
                .map(|i| source_latents.frame_slice(i).to_vec())
                .collect();
            Some(diversity_ranking(&features, count)?)
        } else {
            None
        };

        Ok(Self {
            policy: config.injection(),
            modulation: config.modulation(),
            schedule: make_schedule(config.sample_steps)?,
            unet,
            masks,
            source_latents,
            uncond: embed(&tokenize(NULL_PROMPT))?,
            source_text,
            target_text,
            ranking,
            nonbinary_mask_pixels: inputs.nonbinary_mask_pixels,
            config: config.clone(),
        })
    }

    pub fn source_latents(&self) -> &LatentVideo {
        &self.source_latents
    }

    pub fn unet(&self) -> &ToyUnet {
        &self.unet
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn source_text(&self) -> &TextEmbedding {
        &self.source_text
    }

    pub fn target_text(&self) -> &TextEmbedding {
        &self.target_text
    }

    /// Guided inversion under the source prompt, caching both branches.
    pub fn invert(&self) -> Result<Inversion> {
        let predictor = GuidedPredictor {
            unet: &self.unet,
            uncond: &self.uncond,
            cond: &self.source_text,
            guidance: self.config.guidance,
            policy: &self.policy,
        };
        ddim_invert(&self.source_latents, &self.schedule, &predictor)
            .map_err(|e| e.context("inversion"))
    }

    fn keyframes_at(&self, step: usize) -> Result<Option<StepKeyframes>> {
        let n = self.source_latents.frames();
        self.ranking
            .as_ref()
            .map(|r| {
                let kf = per_step_keyframe_rotation(r, step, self.config.keyframes_per_step);
                StepKeyframes::new(step, kf, n)
            })
            .transpose()
    }

    /// Samples from `inversion.z_t` under the target prompt with injection,
    /// modulation and propagation as configured.
    pub fn denoise(&self, inversion: &Inversion) -> Result<Denoised> {
        let n = self.source_latents.frames();
        let cross_indicators = self.target_text.indicators();
        let mut plan = KeyframePlan::default();
        let mut steps = Vec::with_capacity(self.schedule.sample_steps());
        let mut attention = Vec::new();

        let edited = ddim_sample(&inversion.z_t, &self.schedule, |step, t, z| {
            let keyframes = self.keyframes_at(step)?;
            let record = inversion.cache.get(t);
            let source = |branch: usize| -> Result<Option<_>> {
                if !self.policy.enabled {
                    return Ok(None);
                }
                record
                    .and_then(|r| r.branch(branch))
                    .map(Some)
                    .ok_or_else(|| Error::Injection(format!("no cached activations for t={t}")))
            };
            let no_indicators: &[Vec<u8>] = &[];
            let modulation = |indicators| ModulationInputs {
                masks: &self.masks,
                config: self.modulation,
                indicators,
            };
            let base = Controls {
                step_index: step,
                policy: &self.policy,
                source: None,
                record: false,
                modulation: None,
                keyframes: keyframes.as_ref(),
                sigma: self.config.sigma,
                dump_attention: false,
            };
            let u_ctl = Controls {
                source: source(BRANCH_UNCOND)?,
                modulation: Some(modulation(no_indicators)),
                ..base
            };
            let c_ctl = Controls {
                source: source(BRANCH_COND)?,
                modulation: Some(modulation(cross_indicators.as_slice())),
                dump_attention: self.config.dump_attention,
                ..base
            };
            let ctx = |e: Error| e.context(format!("step {step} (t={t})"));
            let u = self.unet.forward(z, t, &self.uncond, &u_ctl).map_err(ctx)?;
            let c = self
                .unet
                .forward(z, t, &self.target_text, &c_ctl)
                .map_err(ctx)?;

            let mut alpha_self = c.diagnostics.alpha_self;
            alpha_self.merge(&u.diagnostics.alpha_self);
            steps.push(StepDiagnostics {
                step,
                timestep: t,
                keyframes: keyframes
                    .as_ref()
                    .map_or_else(|| (0..n).collect(), |k| k.keyframes.clone()),
                alpha_self,
                alpha_cross: c.diagnostics.alpha_cross,
                blends: c.diagnostics.blends.len() + u.diagnostics.blends.len(),
                weight_fallbacks: c.diagnostics.weight_fallbacks + u.diagnostics.weight_fallbacks,
                copy_fallbacks: c.diagnostics.copy_fallbacks + u.diagnostics.copy_fallbacks,
            });
            if let Some(k) = keyframes {
                plan.steps.push((k, c.diagnostics.blends));
            }
            if self.config.dump_attention {
                attention.push((step, c.attention));
            }
            cfg_combine(&u.eps, &c.eps, self.config.guidance)
        })?;
        Ok(Denoised {
            edited,
            plan,
            steps,
            attention,
        })
    }

    /// Per-attribute, per-frame `ω` at latent resolution, and the number of
    /// empty masks among them.
    pub fn mask_statistics(&self) -> Result<(Vec<Vec<f32>>, usize)> {
        let (h, w) = (self.source_latents.height(), self.source_latents.width());
        let level = self.masks.at(h, w)?;
        let mut empty = 0;
        let omega = level
            .iter()
            .map(|frames| {
                frames
                    .iter()
                    .map(|m| {
                        if m.count() == 0 {
                            empty += 1;
                        }
                        mask_area_ratio(m.values(), m.values().len())
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((omega, empty))
    }

    fn report(&self, denoised: &Denoised, runtime_seconds: f64) -> Result<EditReport> {
        let edited = &denoised.edited;
        let embedder = ToyEmbedder::new(&self.unet, self.config.seed)?;
        let frames = (0..edited.frames())
            .map(|i| embedder.embed_frame(edited, i))
            .collect::<Result<Vec<_>>>()?;
        let metrics = metric_suite(
            &frames,
            &embedder.embed_prompt(&self.source_text)?,
            &embedder.embed_prompt(&self.target_text)?,
        )?;
        let (omega, empty_masks) = self.mask_statistics()?;
        if empty_masks > 0 {
            log::warn!("{empty_masks} masks are empty at latent resolution");
        }
        Ok(EditReport {
            metrics,
            runtime_seconds,
            frames: edited.frames(),
            latent_shape: edited.tensor().shape().to_vec(),
            sample_steps: self.schedule.sample_steps(),
            seed: self.config.seed,
            sigma: self.config.sigma,
            profile: self.config.profile,
            disabled: self.config.disable.iter().copied().collect(),
            source_prompt: self.source_text.tokens().join(" "),
            target_prompt: self.target_text.tokens().join(" "),
            source_distance: edited.mean_frame_distance(&self.source_latents)?,
            omega,
            empty_masks,
            nonbinary_mask_pixels: self.nonbinary_mask_pixels,
            copy_fallbacks: denoised.steps.iter().map(|s| s.copy_fallbacks).sum(),
            weight_fallbacks: denoised.steps.iter().map(|s| s.weight_fallbacks).sum(),
            steps: denoised.steps.clone(),
        })
    }
}

/// Encode, invert under `P`, denoise under `P′`, and score the result.
pub fn run_edit(config: &EditConfig, inputs: &EditInputs) -> Result<EditOutcome> {
    let editor = Editor::new(config, inputs)?;
    let start = Instant::now();
    let inversion = editor.invert()?;
    let denoised = editor.denoise(&inversion)?;
    let runtime = start.elapsed().as_secs_f64();
    let report = editor.report(&denoised, runtime)?;
    Ok(EditOutcome {
        source: editor.source_latents,
        edited: denoised.edited,
        report,
        plan: denoised.plan,
        attention: denoised.attention,
    })
}
