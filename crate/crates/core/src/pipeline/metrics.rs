//! Prompt-fidelity and temporal-coherence scores against a pluggable embedder.
//!
//! [`ToyEmbedder`] is a seeded linear stand-in, not CLIP: its scores are
//! only comparable between runs that share a backbone and seed.

use crate::attention_engine::{TextEmbedding, ToyUnet};
use crate::error::{Error, Result};
use crate::latent_codec::LatentVideo;
use crate::numerics::{cosine_similarity, derive_seed, matmul, matmul_bt, seeded_tensor, Tensor};

/// Maps frames and prompts into one shared space.
pub trait Embedder {
    fn embed_frame(&self, latents: &LatentVideo, frame: usize) -> Result<Vec<f32>>;
    fn embed_prompt(&self, text: &TextEmbedding) -> Result<Vec<f32>>;
}

/// Frames are mean-pooled latents. Prompts are the mean embedding of their
/// attribute tokens (all tokens when none are marked) pushed through the
/// backbone's last cross-attention values and output projection, negated to
/// match the sign with which predicted noise moves the latent. Both sides
/// then share one seeded projection with orthonormal columns, so cosines
/// are those of latent space.
#[derive(Debug, Clone)]
pub struct ToyEmbedder {
    /// `[E × C]`
    projection: Tensor,
    /// `[C × text_dim]`
    readout: Tensor,
}

pub const TOY_EMBED_DIM: usize = 16;

impl ToyEmbedder {
    pub fn new(unet: &ToyUnet, seed: u64) -> Result<Self> {
        let c = unet.config().latent_channels;
        let values = &unet
            .cross_attention_layers()
            .last()
            .expect("backbone has cross-attention")
            .w_v;
        let readout = matmul(unet.output_projection(), values)?.scale(-1.0);
        Ok(Self {
            projection: orthonormal_columns(TOY_EMBED_DIM, c, derive_seed(seed, "embedder"))?,
            readout,
        })
    }

    fn project(&self, v: Vec<f32>) -> Result<Vec<f32>> {
        let row = Tensor::new(vec![1, v.len()], v)?;
        Ok(matmul_bt(&row, &self.projection)?.into_data())
    }
}

/// Gram-Schmidt on the columns of a seeded `[rows × cols]` matrix.
fn orthonormal_columns(rows: usize, cols: usize, seed: u64) -> Result<Tensor> {
    if cols > rows {
        return Err(Error::Dimension(format!(
            "{cols} orthonormal columns in {rows} dimensions"
        )));
    }
    let raw = seeded_tensor(&[cols, rows], seed)?;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for c in 0..cols {
        let mut v: Vec<f64> = raw.row(c).iter().map(|&x| x as f64).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-9 {
            return Err(Error::DegenerateVector(
                "projection column collapsed".into(),
            ));
        }
        basis.push(v.into_iter().map(|x| x / n).collect());
    }
    let data = (0..rows)
        .flat_map(|r| basis.iter().map(move |b| b[r] as f32))
        .collect();
    Tensor::new(vec![rows, cols], data)
}

impl Embedder for ToyEmbedder {
    fn embed_frame(&self, latents: &LatentVideo, frame: usize) -> Result<Vec<f32>> {
        let hw = latents.tokens_per_frame();
        let pooled = latents
            .frame_slice(frame)
            .chunks(hw)
            .map(|ch| (ch.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
            .collect();
        self.project(pooled)
    }

    fn embed_prompt(&self, text: &TextEmbedding) -> Result<Vec<f32>> {
        let mean = Tensor::new(vec![1, text.dim()], text.attribute_embedding())?;
        let latent_dir = matmul_bt(&mean, &self.readout)?.into_data();
        self.project(latent_dir)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Mean cosine between each frame and the target prompt.
    pub clip_t_like: f64,
    /// Mean cosine between adjacent frames; 1 for a single frame.
    pub clip_f_like: f64,
    /// Set when there were no adjacent pairs.
    pub clip_f_single_frame: bool,
    /// Fraction of frames closer to the target prompt than to the source.
    pub frame_acc_like: f64,
}

pub fn metric_suite(frames: &[Vec<f32>], source: &[f32], target: &[f32]) -> Result<Metrics> {
    if frames.is_empty() {
        return Err(Error::Config("no frame embeddings".into()));
    }
    let n = frames.len() as f64;
    let mut clip_t = 0.0;
    let mut wins = 0usize;
    for f in frames {
        let to_target = cosine_similarity(f, target)?;
        clip_t += to_target;
        if to_target > cosine_similarity(f, source)? {
            wins += 1;
        }
    }
    let (clip_f, single) = if frames.len() < 2 {
        (1.0, true)
    } else {
        let sum = frames
            .windows(2)
            .map(|w| cosine_similarity(&w[0], &w[1]))
            .sum::<Result<f64>>()?;
        (sum / (frames.len() - 1) as f64, false)
    };
    Ok(Metrics {
        clip_t_like: clip_t / n,
        clip_f_like: clip_f,
        clip_f_single_frame: single,
        frame_acc_like: wins as f64 / n,
    })
}
