//! A seeded miniature UNet used as the noise predictor.
//!
//! ```text
//! z ─ in-proj + time ─┬─ conv ─ self ─ self ─ cross ───────────────┐ (h × w)
//!                     └─ pool ─ conv ─ self ─ self ─ cross ─ up ─ (+) ─ conv ─ self ─ self ─ cross ─ out-proj ─ ε
//!                                              (h/2 × w/2)              decoder, (h × w)
//! ```
//!
//! Every block is pre-normalised and residual. The noise estimate is read
//! only from the decoder path, after the decoder conv block. Overwriting that block's output with the cached source
//! features therefore pins everything upstream.

use rayon::prelude::*;

use super::attention::{attend, concat_rows, AttentionKind, AttentionLayerSpec};
use super::policy::{apply_injection_policy, InjectionPolicy};
use super::text::TextEmbedding;
use crate::error::{Error, Result};
use crate::latent_codec::{
    cfg_combine, BranchRecord, InversionPredictor, LatentVideo, SourceQk, StepRecord,
};
use crate::modulation::{
    cross_modulation, self_modulation, AttributeTerm, MaskSet, ModulationConfig,
};
use crate::numerics::{
    cosine_similarity, derive_seed, layer_norm_rows, matmul_bt, seeded_tensor, Tensor,
};
use crate::propagation::{
    blend_attention, propagation_weight, BlendRecord, FrameSource, SigmaMode, StepKeyframes,
};

pub const BRANCH_UNCOND: usize = 0;
pub const BRANCH_COND: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneConfig {
    pub latent_channels: usize,
    pub model_dim: usize,
    pub text_dim: usize,
    pub d_k: usize,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            latent_channels: 16,
            model_dim: 32,
            text_dim: 32,
            d_k: 32,
            seed: 0,
        }
    }
}

/// `x + conv3×3(silu(norm(x)))` with zero padding.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub layer_id: usize,
    pub policy_layer: usize,
    pub resolution: (usize, usize),
    /// `[d × 9d]`, input laid out `(ky, kx, channel)`
    weight: Tensor,
}

impl ConvBlock {
    fn seeded(
        layer_id: usize,
        policy_layer: usize,
        dim: usize,
        res: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            layer_id,
            policy_layer,
            resolution: res,
            weight: seeded_tensor(
                &[dim, 9 * dim],
                derive_seed(seed, &format!("conv{layer_id}")),
            )?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w) = self.resolution;
        let d = x.cols();
        if x.rows() != h * w {
            return Err(Error::Dimension(format!(
                "conv {} expects {} tokens, got {}",
                self.layer_id,
                h * w,
                x.rows()
            )));
        }
        let act: Vec<f32> = layer_norm_rows(x)?
            .data()
            .iter()
            .map(|&v| v / (1.0 + (-v).exp()))
            .collect();
        let mut cols = vec![0.0f32; h * w * 9 * d];
        for y in 0..h {
            for xx in 0..w {
                let dst = (y * w + xx) * 9 * d;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sy, sx) =
                            (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        let src = (sy as usize * w + sx as usize) * d;
                        let off = dst + (ky * 3 + kx) * d;
                        cols[off..off + d].copy_from_slice(&act[src..src + d]);
                    }
                }
            }
        }
        let conv = matmul_bt(&Tensor::new(vec![h * w, 9 * d], cols)?, &self.weight)?;
        x.add(&conv)
    }
}

#[derive(Debug, Clone)]
struct Level {
    conv: ConvBlock,
    self_attn: [AttentionLayerSpec; 2],
    cross: AttentionLayerSpec,
}

/// Running min/max of observed α values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Range {
    pub min: f32,
    pub max: f32,
    pub count: usize,
}

impl Range {
    pub fn push(&mut self, v: f32) {
        if self.count == 0 {
            self.min = v;
            self.max = v;
        } else {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: &Range) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.count += other.count;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardDiagnostics {
    pub alpha_self: Range,
    pub alpha_cross: Range,
    pub blends: Vec<BlendRecord>,
    pub weight_fallbacks: usize,
    pub copy_fallbacks: usize,
}

impl ForwardDiagnostics {
    fn absorb(&mut self, kind: AttentionKind, terms: &[AttributeTerm]) {
        let r = match kind {
            AttentionKind::SelfAttention => &mut self.alpha_self,
            AttentionKind::Cross => &mut self.alpha_cross,
        };
        for t in terms {
            r.push(t.alpha);
        }
    }
}

/// Post-softmax scores of one frame at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    pub layer: usize,
    pub frame: usize,
    pub scores: Tensor,
}

/// Mask-guided modulation inputs for one branch.
#[derive(Debug, Clone, Copy)]
pub struct ModulationInputs<'a> {
    /// Must have every attention resolution prepared.
    pub masks: &'a MaskSet,
    pub config: ModulationConfig,
    /// `I^{τ_m}` per attribute; empty disables cross modulation.
    pub indicators: &'a [Vec<u8>],
}

/// Everything that alters a plain forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Controls<'a> {
    pub step_index: usize,
    pub policy: &'a InjectionPolicy,
    /// Cached source activations to inject, if any.
    pub source: Option<&'a BranchRecord>,
    pub record: bool,
    pub modulation: Option<ModulationInputs<'a>>,
    /// `None` treats every frame as a keyframe.
    pub keyframes: Option<&'a StepKeyframes>,
    pub sigma: SigmaMode,
    pub dump_attention: bool,
}

impl<'a> Controls<'a> {
    pub fn plain(policy: &'a InjectionPolicy) -> Self {
        Self {
            step_index: 0,
            policy,
            source: None,
            record: false,
            modulation: None,
            keyframes: None,
            sigma: SigmaMode::Logistic,
            dump_attention: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub eps: Tensor,
    pub record: BranchRecord,
    pub diagnostics: ForwardDiagnostics,
    pub attention: Vec<AttentionDump>,
}

#[derive(Default)]
struct State {
    record: BranchRecord,
    diagnostics: ForwardDiagnostics,
    attention: Vec<AttentionDump>,
}

#[derive(Debug, Clone)]
pub struct ToyUnet {
    config: BackboneConfig,
    w_in: Tensor,
    w_time: Tensor,
    w_out: Tensor,
    enc_full: Level,
    enc_half: Level,
    decoder: Level,
}

/// `(layer id, policy id)` of every block, in execution order.
///
/// Self-attention blocks carry policy ids inside the default `4..=11`
/// injection set; only the decoder conv block carries the feature id 4.
const LAYER_TABLE: [(&str, usize, usize); 12] = [
    ("enc_full.conv", 0, 0),
    ("enc_full.self0", 1, 6),
    ("enc_full.self1", 2, 7),
    ("enc_full.cross", 3, 0),
    ("enc_half.conv", 4, 1),
    ("enc_half.self0", 5, 8),
    ("enc_half.self1", 6, 9),
    ("enc_half.cross", 7, 0),
    ("decoder.conv", 8, 4),
    ("decoder.self0", 9, 4),
    ("decoder.self1", 10, 5),
    ("decoder.cross", 11, 0),
];

impl ToyUnet {
    /// Builds the network for latents of spatial size `height × width`
    /// (both even and at least 4).
    pub fn new(config: BackboneConfig, height: usize, width: usize) -> Result<Self> {
        if height < 4 || width < 4 || !height.is_multiple_of(2) || !width.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "backbone needs even latent sides >= 4, got {height}x{width}"
            )));
        }
        let BackboneConfig {
            latent_channels: c,
            model_dim: d,
            text_dim,
            d_k,
            seed,
        } = config;
        let full = (height, width);
        let half = (height / 2, width / 2);
        let level = |base: usize, res: (usize, usize)| -> Result<Level> {
            let ids = |k: usize| (LAYER_TABLE[base + k].1, LAYER_TABLE[base + k].2);
            let sa = |k: usize| {
                let (id, policy) = ids(k);
                AttentionLayerSpec::seeded(
                    id,
                    policy,
                    AttentionKind::SelfAttention,
                    d,
                    d,
                    d_k,
                    res,
                    seed,
                )
            };
            let (cid, cpol) = ids(0);
            let (xid, xpol) = ids(3);
            Ok(Level {
                conv: ConvBlock::seeded(cid, cpol, d, res, seed)?,
                self_attn: [sa(1)?, sa(2)?],
                cross: AttentionLayerSpec::seeded(
                    xid,
                    xpol,
                    AttentionKind::Cross,
                    d,
                    text_dim,
                    d_k,
                    res,
                    seed,
                )?,
            })
        };
        Ok(Self {
            config,
            w_in: seeded_tensor(&[d, c], derive_seed(seed, "in"))?,
            w_time: seeded_tensor(&[d, d], derive_seed(seed, "time"))?,
            w_out: seeded_tensor(&[c, d], derive_seed(seed, "out"))?,
            enc_full: level(0, full)?,
            enc_half: level(4, half)?,
            decoder: level(8, full)?,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn self_attention_layers(&self) -> impl Iterator<Item = &AttentionLayerSpec> {
        [&self.enc_full, &self.enc_half, &self.decoder]
            .into_iter()
            .flat_map(|l| l.self_attn.iter())
    }

    pub fn cross_attention_layers(&self) -> impl Iterator<Item = &AttentionLayerSpec> {
        [&self.enc_full, &self.enc_half, &self.decoder]
            .into_iter()
            .map(|l| &l.cross)
    }

    pub fn conv_blocks(&self) -> impl Iterator<Item = &ConvBlock> {
        [&self.enc_full, &self.enc_half, &self.decoder]
            .into_iter()
            .map(|l| &l.conv)
    }

    /// Distinct attention resolutions, full first.
    pub fn resolutions(&self) -> [(usize, usize); 2] {
        [self.enc_full.conv.resolution, self.enc_half.conv.resolution]
    }

    /// Output projection `[C × d]` from decoder tokens to noise channels.
    pub fn output_projection(&self) -> &Tensor {
        &self.w_out
    }

    fn time_embedding(&self, t: usize) -> Result<Tensor> {
        let d = self.config.model_dim;
        let half = d / 2;
        let mut emb = vec![0.0f32; d];
        for j in 0..half {
            let freq = (-(10_000f64.ln()) * j as f64 / half as f64).exp();
            emb[j] = (t as f64 * freq).sin() as f32;
            emb[j + half] = (t as f64 * freq).cos() as f32;
        }
        matmul_bt(&Tensor::new(vec![1, d], emb)?, &self.w_time)
    }

    /// One branch of the noise predictor.
    pub fn forward(
        &self,
        z: &LatentVideo,
        t: usize,
        text: &TextEmbedding,
        ctl: &Controls<'_>,
    ) -> Result<ForwardOutput> {
        if z.channels() != self.config.latent_channels
            || (z.height(), z.width()) != self.enc_full.conv.resolution
        {
            return Err(Error::Dimension(format!(
                "latents {:?} do not fit backbone ({} channels, {:?})",
                z.tensor().shape(),
                self.config.latent_channels,
                self.enc_full.conv.resolution
            )));
        }
        if text.dim() != self.config.text_dim {
            return Err(Error::Dimension(format!(
                "text width {} vs backbone {}",
                text.dim(),
                self.config.text_dim
            )));
        }
        let n = z.frames();
        let temb = self.time_embedding(t)?;
        let mut x: Vec<Tensor> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut tok = matmul_bt(&z.frame_tokens(i), &self.w_in)?;
                let d = tok.cols();
                for row in tok.data_mut().chunks_mut(d) {
                    for (v, e) in row.iter_mut().zip(temb.data()) {
                        *v += e;
                    }
                }
                Ok(tok)
            })
            .collect::<Result<_>>()?;

        let mut state = State::default();
        self.run_level(&self.enc_full, &mut x, t, text, ctl, &mut state)?;
        let skip = x.clone();
        let (h, w) = self.enc_full.conv.resolution;
        let mut y: Vec<Tensor> = x
            .iter()
            .map(|f| avg_pool2(f, h, w))
            .collect::<Result<_>>()?;
        self.run_level(&self.enc_half, &mut y, t, text, ctl, &mut state)?;
        let mut u: Vec<Tensor> = y
            .iter()
            .zip(&skip)
            .map(|(f, s)| upsample2(f, h / 2, w / 2)?.add(s))
            .collect::<Result<_>>()?;
        self.run_level(&self.decoder, &mut u, t, text, ctl, &mut state)?;

        let eps_tokens: Vec<Tensor> = u
            .par_iter()
            .map(|f| matmul_bt(&layer_norm_rows(f)?, &self.w_out))
            .collect::<Result<_>>()?;
        let eps = LatentVideo::from_frame_tokens(&eps_tokens, h, w)?.into_tensor();
        eps.ensure_finite("noise estimate")?;
        Ok(ForwardOutput {
            eps,
            record: state.record,
            diagnostics: state.diagnostics,
            attention: state.attention,
        })
    }

    fn run_level(
        &self,
        level: &Level,
        x: &mut Vec<Tensor>,
        t: usize,
        text: &TextEmbedding,
        ctl: &Controls<'_>,
        state: &mut State,
    ) -> Result<()> {
        self.conv_step(&level.conv, x, ctl, state)
            .map_err(|e| e.context(format!("layer {}", level.conv.layer_id)))?;
        for layer in &level.self_attn {
            self.self_attention_step(layer, x, t, ctl, state)
                .map_err(|e| e.context(format!("layer {}", layer.layer_id)))?;
        }
        self.cross_attention_step(&level.cross, x, t, text, ctl, state)
            .map_err(|e| e.context(format!("layer {}", level.cross.layer_id)))
    }

    fn conv_step(
        &self,
        conv: &ConvBlock,
        x: &mut Vec<Tensor>,
        ctl: &Controls<'_>,
        state: &mut State,
    ) -> Result<()> {
        let computed: Vec<Tensor> = x
            .par_iter()
            .map(|f| conv.forward(f))
            .collect::<Result<_>>()?;
        if ctl.record && conv.policy_layer == ctl.policy.feature_layer {
            state
                .record
                .features
                .insert(conv.layer_id, computed.clone());
        }
        let (_, inject) = apply_injection_policy(ctl.step_index, conv.policy_layer, ctl.policy);
        *x = match (inject, ctl.source) {
            (true, Some(src)) => {
                let cached = src.features.get(&conv.layer_id).ok_or_else(|| {
                    Error::Injection(format!("no cached features for conv {}", conv.layer_id))
                })?;
                if cached.len() != computed.len()
                    || cached
                        .iter()
                        .zip(&computed)
                        .any(|(a, b)| a.shape() != b.shape())
                {
                    return Err(Error::Injection(format!(
                        "cached features for conv {} do not match the current frames",
                        conv.layer_id
                    )));
                }
                cached.clone()
            }
            _ => computed,
        };
        Ok(())
    }

    fn self_attention_step(
        &self,
        layer: &AttentionLayerSpec,
        x: &mut [Tensor],
        t: usize,
        ctl: &Controls<'_>,
        state: &mut State,
    ) -> Result<()> {
        let n = x.len();
        let projected: Vec<(Tensor, Tensor, Tensor)> = x
            .par_iter()
            .map(|f| {
                let f = layer_norm_rows(f)?;
                Ok((layer.queries(&f)?, layer.keys(&f)?, layer.values(&f)?))
            })
            .collect::<Result<_>>()?;
        if ctl.record {
            state.record.qk.insert(
                layer.layer_id,
                projected
                    .iter()
                    .map(|(q, k, _)| SourceQk {
                        q: q.clone(),
                        k: k.clone(),
                    })
                    .collect(),
            );
        }
        let (inject, _) = apply_injection_policy(ctl.step_index, layer.policy_layer, ctl.policy);
        let (queries, keys): (Vec<&Tensor>, Vec<&Tensor>) = match (inject, ctl.source) {
            (true, Some(src)) => {
                let cached = src.qk.get(&layer.layer_id).ok_or_else(|| {
                    Error::Injection(format!("no cached Q/K for layer {}", layer.layer_id))
                })?;
                if cached.len() != n
                    || cached
                        .iter()
                        .zip(&projected)
                        .any(|(c, (q, k, _))| c.q.shape() != q.shape() || c.k.shape() != k.shape())
                {
                    return Err(Error::Injection(format!(
                        "cached Q/K for layer {} do not match the current frames",
                        layer.layer_id
                    )));
                }
                cached.iter().map(|c| (&c.q, &c.k)).unzip()
            }
            _ => projected.iter().map(|(q, k, _)| (q, k)).unzip(),
        };
        let k_all = concat_rows(&keys.into_iter().cloned().collect::<Vec<_>>())?;
        let v_all = concat_rows(
            &projected
                .iter()
                .map(|(_, _, v)| v.clone())
                .collect::<Vec<_>>(),
        )?;

        let keyframes: Vec<usize> = match ctl.keyframes {
            Some(plan) => plan.keyframes.clone(),
            None => (0..n).collect(),
        };
        let masks = match ctl.modulation {
            Some(m) if m.config.enabled => Some((
                m.masks.at(layer.resolution.0, layer.resolution.1)?,
                m.config.gamma_self,
                m.config.lambda(t),
            )),
            _ => None,
        };
        let computed: Vec<(usize, Tensor, Tensor, Vec<AttributeTerm>)> = keyframes
            .par_iter()
            .map(|&i| {
                let raw = matmul_bt(queries[i], &k_all)?;
                let (delta, terms) = match masks {
                    Some((m, gamma, lambda)) => {
                        let (d, terms) = self_modulation(&raw, i, m, gamma, lambda)?;
                        (Some(d), terms)
                    }
                    None => (None, Vec::new()),
                };
                let out = attend(&raw, delta.as_ref(), &v_all, layer.d_k)?;
                Ok((i, out.output, out.scores, terms))
            })
            .collect::<Result<_>>()?;

        let mut outputs: Vec<Option<Tensor>> = vec![None; n];
        for (i, output, scores, terms) in computed {
            state
                .diagnostics
                .absorb(AttentionKind::SelfAttention, &terms);
            if ctl.dump_attention {
                state.attention.push(AttentionDump {
                    layer: layer.layer_id,
                    frame: i,
                    scores,
                });
            }
            outputs[i] = Some(output);
        }
        if let Some(plan) = ctl.keyframes {
            for (&i, source) in &plan.sources {
                let blended = match *source {
                    FrameSource::Copy(k) => {
                        state.diagnostics.copy_fallbacks += 1;
                        outputs[k].clone().expect("keyframe output")
                    }
                    FrameSource::Blend(nb) => {
                        let sim1 = cosine_similarity(x[i].data(), x[nb.k1].data())?;
                        let sim2 = cosine_similarity(x[i].data(), x[nb.k2].data())?;
                        let w =
                            propagation_weight(nb.d1 as f64, nb.d2 as f64, sim1, sim2, ctl.sigma)?;
                        if w.is_fallback() {
                            state.diagnostics.weight_fallbacks += 1;
                        }
                        state.diagnostics.blends.push(BlendRecord {
                            layer: layer.layer_id,
                            frame: i,
                            k1: nb.k1,
                            k2: nb.k2,
                            d1: nb.d1,
                            d2: nb.d2,
                            sim1,
                            sim2,
                            w_temp: w.w_temp,
                            w1: w.w1,
                        });
                        let a = outputs[nb.k1].as_ref().expect("keyframe output");
                        let b = outputs[nb.k2].as_ref().expect("keyframe output");
                        blend_attention(a, b, w.w1)?
                    }
                };
                outputs[i] = Some(blended);
            }
        }
        for (f, out) in x.iter_mut().zip(outputs) {
            let out = out.ok_or_else(|| {
                Error::Propagation(format!(
                    "layer {} left a frame without output",
                    layer.layer_id
                ))
            })?;
            f.add_assign(&out)?;
        }
        Ok(())
    }

    fn cross_attention_step(
        &self,
        layer: &AttentionLayerSpec,
        x: &mut [Tensor],
        t: usize,
        text: &TextEmbedding,
        ctl: &Controls<'_>,
        state: &mut State,
    ) -> Result<()> {
        let keys = layer.keys(text.tensor())?;
        let values = layer.values(text.tensor())?;
        let modulation = match ctl.modulation {
            Some(m) if m.config.enabled && !m.indicators.is_empty() => {
                if m.indicators.iter().any(|ind| ind.len() != text.len()) {
                    return Err(Error::Injection(format!(
                        "token indicators do not match the {}-token prompt",
                        text.len()
                    )));
                }
                Some((
                    m.masks.at(layer.resolution.0, layer.resolution.1)?,
                    m.indicators,
                    m.config.gamma_cross,
                    m.config.lambda(t),
                ))
            }
            _ => None,
        };
        let computed: Vec<(Tensor, Tensor, Vec<AttributeTerm>)> = x
            .par_iter()
            .enumerate()
            .map(|(i, f)| {
                let raw = matmul_bt(&layer.queries(&layer_norm_rows(f)?)?, &keys)?;
                let (delta, terms) = match modulation {
                    Some((masks, indicators, gamma, lambda)) => {
                        let frame_masks: Vec<_> = masks.iter().map(|a| &a[i]).collect();
                        let (d, terms) =
                            cross_modulation(&raw, &frame_masks, indicators, gamma, lambda)?;
                        (Some(d), terms)
                    }
                    None => (None, Vec::new()),
                };
                let out = attend(&raw, delta.as_ref(), &values, layer.d_k)?;
                Ok((out.output, out.scores, terms))
            })
            .collect::<Result<_>>()?;
        for (i, (f, (output, scores, terms))) in x.iter_mut().zip(computed).enumerate() {
            state.diagnostics.absorb(AttentionKind::Cross, &terms);
            if ctl.dump_attention {
                state.attention.push(AttentionDump {
                    layer: layer.layer_id,
                    frame: i,
                    scores,
                });
            }
            f.add_assign(&output)?;
        }
        Ok(())
    }
}

fn avg_pool2(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let d = x.cols();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; oh * ow * d];
    for y in 0..oh {
        for xx in 0..ow {
            let dst = &mut out[(y * ow + xx) * d..(y * ow + xx + 1) * d];
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let src = x.row((2 * y + dy) * w + 2 * xx + dx);
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += 0.25 * s;
                }
            }
        }
    }
    Tensor::new(vec![oh * ow, d], out)
}

fn upsample2(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let d = x.cols();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(oh * ow * d);
    for y in 0..oh {
        for xx in 0..ow {
            out.extend_from_slice(x.row((y / 2) * w + xx / 2));
        }
    }
    Tensor::new(vec![oh * ow, d], out)
}

/// Classifier-free-guided predictor over the two branches.
#[derive(Debug, Clone, Copy)]
pub struct GuidedPredictor<'a> {
    pub unet: &'a ToyUnet,
    pub uncond: &'a TextEmbedding,
    pub cond: &'a TextEmbedding,
    pub guidance: f32,
    pub policy: &'a InjectionPolicy,
}

impl InversionPredictor for GuidedPredictor<'_> {
    fn predict_recording(&self, z: &LatentVideo, t: usize) -> Result<(Tensor, StepRecord)> {
        let ctl = Controls {
            record: true,
            ..Controls::plain(self.policy)
        };
        let u = self.unet.forward(z, t, self.uncond, &ctl)?;
        let c = self.unet.forward(z, t, self.cond, &ctl)?;
        let eps = cfg_combine(&u.eps, &c.eps, self.guidance)?;
        let mut branches = vec![BranchRecord::default(); 2];
        branches[BRANCH_UNCOND] = u.record;
        branches[BRANCH_COND] = c.record;
        Ok((eps, StepRecord { branches }))
    }
}
