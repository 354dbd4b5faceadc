//! Mask-guided attention modulation.
//!
//! For each attribute `m` the query/key correspondence `E` marks same-attribute
//! pairs and `Ē` marks pairs whose key lies inside the attribute while the
//! query does not. The additive score term is
//!
//! ```text
//! Δ_modu = Σ_m  γ · (t / 1000) · (1 − ω_m) · α_m · (E_m − Ē_m)
//! ```
//!
//! where `α_m` is the largest raw score `QKᵀ` inside `E_m` (never below 0) and
//! `ω_m` is the fraction of the query frame covered by the attribute.

mod mask;

pub use mask::{downsample_mask, BinaryMask, MaskSet};

use serde::{Deserialize, Serialize};

use crate::attention_engine::AttentionKind;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_GAMMA_SELF: f32 = 0.1;
pub const DEFAULT_GAMMA_CROSS: f32 = 1.0;
pub const LAMBDA_DENOMINATOR: f32 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationConfig {
    pub gamma_self: f32,
    pub gamma_cross: f32,
    pub lambda_denominator: f32,
    pub enabled: bool,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        Self {
            gamma_self: DEFAULT_GAMMA_SELF,
            gamma_cross: DEFAULT_GAMMA_CROSS,
            lambda_denominator: LAMBDA_DENOMINATOR,
            enabled: true,
        }
    }
}

impl ModulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_self >= 0.0 && self.gamma_cross >= 0.0) {
            return Err(Error::Config("modulation gammas must be >= 0".into()));
        }
        if self.lambda_denominator.is_nan() || self.lambda_denominator <= 0.0 {
            return Err(Error::Config("lambda denominator must be positive".into()));
        }
        Ok(())
    }

    pub fn gamma(&self, kind: AttentionKind) -> f32 {
        match kind {
            AttentionKind::SelfAttention => self.gamma_self,
            AttentionKind::Cross => self.gamma_cross,
        }
    }

    /// `λ_t = t / denominator`.
    pub fn lambda(&self, t: usize) -> f32 {
        t as f32 / self.lambda_denominator
    }
}

/// Additive pre-softmax score term.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationDelta {
    pub kind: AttentionKind,
    pub matrix: Tensor,
}

/// Per-attribute quantities behind one Δ, kept for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributeTerm {
    pub attribute: usize,
    pub alpha: f32,
    pub omega: f32,
    /// `γ·λ_t·(1−ω)`
    pub scale: f32,
}

fn outer(rows: impl Iterator<Item = f32> + Clone, cols: &[f32]) -> Vec<f32> {
    rows.flat_map(|r| cols.iter().map(move |&c| r * c))
        .collect()
}

/// `E[p,(j,q)] = M_i[p]·M_j[q]` and `Ē[p,(j,q)] = (1−M_i[p])·M_j[q]`, with key
/// columns ordered frame-major then row-major spatial.
pub fn self_correspondence(query_mask: &[u8], key_masks: &[&[u8]]) -> Result<(Tensor, Tensor)> {
    let hw = query_mask.len();
    if key_masks.iter().any(|m| m.len() != hw) {
        return Err(Error::Dimension(
            "key frame masks must match the query mask length".into(),
        ));
    }
    let keys: Vec<f32> = key_masks
        .iter()
        .flat_map(|m| m.iter().map(|&v| v as f32))
        .collect();
    let inside = outer(query_mask.iter().map(|&v| v as f32), &keys);
    let outside = outer(query_mask.iter().map(|&v| 1.0 - v as f32), &keys);
    let shape = vec![hw, keys.len()];
    Ok((
        Tensor::new(shape.clone(), inside)?,
        Tensor::new(shape, outside)?,
    ))
}

/// `E[p,t] = M_i[p]·I[t]` and `Ē[p,t] = (1−M_i[p])·I[t]`.
pub fn cross_correspondence(query_mask: &[u8], indicator: &[u8]) -> Result<(Tensor, Tensor)> {
    if indicator.iter().any(|&v| v > 1) {
        return Err(Error::Config("token indicator must be binary".into()));
    }
    let tokens: Vec<f32> = indicator.iter().map(|&v| v as f32).collect();
    let inside = outer(query_mask.iter().map(|&v| v as f32), &tokens);
    let outside = outer(query_mask.iter().map(|&v| 1.0 - v as f32), &tokens);
    let shape = vec![query_mask.len(), tokens.len()];
    Ok((
        Tensor::new(shape.clone(), inside)?,
        Tensor::new(shape, outside)?,
    ))
}

/// Largest raw score where `E == 1`, floored at 0; an empty `E` gives 0.
pub fn alpha_max(raw_scores: &Tensor, e: &Tensor) -> Result<f32> {
    if raw_scores.shape() != e.shape() {
        return Err(Error::Dimension(format!(
            "scores {:?} vs correspondence {:?}",
            raw_scores.shape(),
            e.shape()
        )));
    }
    Ok(raw_scores
        .data()
        .iter()
        .zip(e.data())
        .filter(|(_, &m)| m == 1.0)
        .map(|(&s, _)| s)
        .fold(0.0, f32::max))
}

/// `α·E − α·Ē`.
pub fn delta_attn(e: &Tensor, e_bar: &Tensor, alpha: f32) -> Result<Tensor> {
    let diff = e.sub(e_bar)?;
    Ok(diff.scale(alpha))
}

/// `ω = Σ_p M[p] / |V|`.
pub fn mask_area_ratio(mask: &[u8], token_count: usize) -> Result<f32> {
    if mask.len() != token_count || token_count == 0 {
        return Err(Error::Dimension(format!(
            "mask has {} tokens, expected {token_count}",
            mask.len()
        )));
    }
    Ok(mask.iter().map(|&v| v as usize).sum::<usize>() as f32 / token_count as f32)
}

/// `γ·λ·(1−ω)·Δ` for an explicit `λ`.
pub fn regularize_with(delta: &Tensor, gamma: f32, lambda: f32, omega: f32) -> Tensor {
    delta.scale(gamma * lambda * (1.0 - omega))
}

/// `γ·(t/1000)·(1−ω)·Δ`.
pub fn regularize(delta: &Tensor, gamma: f32, t: usize, omega: f32) -> Tensor {
    regularize_with(delta, gamma, t as f32 / LAMBDA_DENOMINATOR, omega)
}

fn accumulate(
    raw: &Tensor,
    kind: AttentionKind,
    terms: impl Iterator<Item = Result<(usize, f32, Tensor, Tensor)>>,
    gamma: f32,
    lambda: f32,
) -> Result<(ModulationDelta, Vec<AttributeTerm>)> {
    // Summed in f64 and rounded once so many attributes don't compound error.
    let mut total = vec![0.0f64; raw.len()];
    let mut stats = Vec::new();
    for term in terms {
        let (attribute, omega, e, e_bar) = term?;
        let alpha = alpha_max(raw, &e)?;
        let scale = gamma * lambda * (1.0 - omega);
        let weight = gamma as f64 * lambda as f64 * (1.0 - omega as f64) * alpha as f64;
        for ((t, &a), &b) in total.iter_mut().zip(e.data()).zip(e_bar.data()) {
            *t += weight * (a as f64 - b as f64);
        }
        stats.push(AttributeTerm {
            attribute,
            alpha,
            omega,
            scale,
        });
    }
    Ok((
        ModulationDelta {
            kind,
            matrix: Tensor::new(
                raw.shape().to_vec(),
                total.into_iter().map(|v| v as f32).collect(),
            )?,
        },
        stats,
    ))
}

/// Summed Δ for self-attention queries of `frame`.
///
/// `masks[m][j]` is attribute `m` in frame `j` at this layer's resolution;
/// `raw` is `Q_i·[K_1..K_N]ᵀ` before scaling.
pub fn self_modulation(
    raw: &Tensor,
    frame: usize,
    masks: &[Vec<BinaryMask>],
    gamma: f32,
    lambda: f32,
) -> Result<(ModulationDelta, Vec<AttributeTerm>)> {
    let terms = masks.iter().enumerate().map(|(m, frames)| {
        let query = frames
            .get(frame)
            .ok_or_else(|| Error::Injection(format!("no mask for frame {frame}")))?
            .values();
        let keys: Vec<&[u8]> = frames.iter().map(BinaryMask::values).collect();
        let (e, e_bar) = self_correspondence(query, &keys)?;
        let omega = mask_area_ratio(query, query.len())?;
        Ok((m, omega, e, e_bar))
    });
    accumulate(raw, AttentionKind::SelfAttention, terms, gamma, lambda)
}

/// Summed Δ for cross-attention of one frame.
///
/// `frame_masks[m]` is attribute `m` in the query frame and `indicators[m]`
/// marks that attribute's prompt tokens.
pub fn cross_modulation(
    raw: &Tensor,
    frame_masks: &[&BinaryMask],
    indicators: &[Vec<u8>],
    gamma: f32,
    lambda: f32,
) -> Result<(ModulationDelta, Vec<AttributeTerm>)> {
    if frame_masks.len() != indicators.len() {
        return Err(Error::Injection(format!(
            "{} attribute masks but {} token indicators",
            frame_masks.len(),
            indicators.len()
        )));
    }
    let terms = frame_masks
        .iter()
        .zip(indicators)
        .enumerate()
        .map(|(m, (mask, ind))| {
            let (e, e_bar) = cross_correspondence(mask.values(), ind)?;
            let omega = mask_area_ratio(mask.values(), mask.values().len())?;
            Ok((m, omega, e, e_bar))
        });
    accumulate(raw, AttentionKind::Cross, terms, gamma, lambda)
}
