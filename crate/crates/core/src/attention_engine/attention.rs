use serde::{Deserialize, Serialize};

use super::text::TextEmbedding;
use crate::error::{Error, Result};
use crate::modulation::ModulationDelta;
use crate::numerics::{derive_seed, matmul, matmul_bt, seeded_tensor, softmax_rows, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionKind {
    SelfAttention,
    Cross,
}

/// A single-head attention layer with frozen seeded projections.
///
/// `w_q` is `[d_k × d_model]`, `w_k` is `[d_k × d_context]` and `w_v` is
/// `[d_model × d_context]`; for self-attention `d_context == d_model`.
#[derive(Debug, Clone)]
pub struct AttentionLayerSpec {
    pub layer_id: usize,
    pub policy_layer: usize,
    pub kind: AttentionKind,
    pub d_k: usize,
    pub resolution: (usize, usize),
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// Post-softmax scores `A′`.
    pub scores: Tensor,
    /// `A′·V`, one row per query token.
    pub output: Tensor,
}

impl AttentionLayerSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn seeded(
        layer_id: usize,
        policy_layer: usize,
        kind: AttentionKind,
        d_model: usize,
        d_context: usize,
        d_k: usize,
        resolution: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        if d_k == 0 || d_model == 0 || d_context == 0 {
            return Err(Error::Config(
                "attention dimensions must be positive".into(),
            ));
        }
        if kind == AttentionKind::SelfAttention && d_context != d_model {
            return Err(Error::Config(
                "self-attention context width must equal the model width".into(),
            ));
        }
        let tag = |w: &str| derive_seed(seed, &format!("attn{layer_id}.{w}"));
        Ok(Self {
            layer_id,
            policy_layer,
            kind,
            d_k,
            resolution,
            w_q: seeded_tensor(&[d_k, d_model], tag("q"))?,
            w_k: seeded_tensor(&[d_k, d_context], tag("k"))?,
            w_v: seeded_tensor(&[d_model, d_context], tag("v"))?,
        })
    }

    pub fn tokens(&self) -> usize {
        self.resolution.0 * self.resolution.1
    }

    pub fn queries(&self, x: &Tensor) -> Result<Tensor> {
        matmul_bt(x, &self.w_q)
    }

    pub fn keys(&self, context: &Tensor) -> Result<Tensor> {
        matmul_bt(context, &self.w_k)
    }

    pub fn values(&self, context: &Tensor) -> Result<Tensor> {
        matmul_bt(context, &self.w_v)
    }
}

/// Stacks 2-D tensors with equal column counts.
pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
    let cols = parts.first().map_or(0, Tensor::cols);
    let mut data = Vec::with_capacity(parts.iter().map(Tensor::len).sum());
    for p in parts {
        if p.shape().len() != 2 || p.cols() != cols {
            return Err(Error::Dimension(format!(
                "cannot stack {:?} under {cols} columns",
                p.shape()
            )));
        }
        data.extend_from_slice(p.data());
    }
    let rows = parts.iter().map(Tensor::rows).sum();
    Tensor::new(vec![rows, cols], data)
}

/// `softmax((raw + Δ)/√d_k)·V`.
pub fn attend(
    raw: &Tensor,
    delta: Option<&ModulationDelta>,
    values: &Tensor,
    d_k: usize,
) -> Result<AttentionOutput> {
    let pre = match delta {
        Some(d) => {
            if d.matrix.shape() != raw.shape() {
                return Err(Error::Injection(format!(
                    "modulation {:?} does not match scores {:?}",
                    d.matrix.shape(),
                    raw.shape()
                )));
            }
            raw.add(&d.matrix)?
        }
        None => raw.clone(),
    };
    let scores = softmax_rows(&pre.scale(1.0 / (d_k as f32).sqrt()))?;
    let output = matmul(&scores, values)?;
    Ok(AttentionOutput { scores, output })
}

/// Inflated self-attention for frame `frame_i`: queries from that frame,
/// keys and values from all frames in index order. When `injected` is given
/// it replaces `Q` (`[hw × d_k]`) and the stacked `K` (`[N·hw × d_k]`).
pub fn inflated_self_attention(
    frames: &[Tensor],
    layer: &AttentionLayerSpec,
    frame_i: usize,
    delta: Option<&ModulationDelta>,
    injected: Option<(&Tensor, &Tensor)>,
) -> Result<AttentionOutput> {
    if layer.kind != AttentionKind::SelfAttention {
        return Err(Error::Config(format!(
            "layer {} is not a self-attention layer",
            layer.layer_id
        )));
    }
    let x = frames
        .get(frame_i)
        .ok_or_else(|| Error::Dimension(format!("frame {frame_i} of {}", frames.len())))?;
    let values = concat_rows(
        &frames
            .iter()
            .map(|f| layer.values(f))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let (q, k) = match injected {
        Some((q, k)) => {
            let want_q = [x.rows(), layer.d_k];
            let want_k = [values.rows(), layer.d_k];
            if q.shape() != want_q || k.shape() != want_k {
                return Err(Error::Injection(format!(
                    "cached Q {:?} / K {:?}, expected {want_q:?} / {want_k:?}",
                    q.shape(),
                    k.shape()
                )));
            }
            (q.clone(), k.clone())
        }
        None => (
            layer.queries(x)?,
            concat_rows(
                &frames
                    .iter()
                    .map(|f| layer.keys(f))
                    .collect::<Result<Vec<_>>>()?,
            )?,
        ),
    };
    attend(&matmul_bt(&q, &k)?, delta, &values, layer.d_k)
}

/// Cross-attention of one frame's tokens against prompt embeddings.
pub fn cross_attention(
    x: &Tensor,
    text: &TextEmbedding,
    layer: &AttentionLayerSpec,
    delta: Option<&ModulationDelta>,
) -> Result<AttentionOutput> {
    if layer.kind != AttentionKind::Cross {
        return Err(Error::Config(format!(
            "layer {} is not a cross-attention layer",
            layer.layer_id
        )));
    }
    let raw = matmul_bt(&layer.queries(x)?, &layer.keys(text.tensor())?)?;
    attend(&raw, delta, &layer.values(text.tensor())?, layer.d_k)
}
