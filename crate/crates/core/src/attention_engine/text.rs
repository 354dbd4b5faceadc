use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, seeded_tensor, Tensor};

/// Splits a prompt into lowercase whitespace-delimited tokens.
pub fn tokenize(prompt: &str) -> Vec<String> {
    prompt.split_whitespace().map(str::to_lowercase).collect()
}

fn token_id(token: &str) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(token.as_bytes());
    h.finish()
}

/// Prompt token embeddings plus the token positions of each edited attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    tokens: Vec<String>,
    data: Tensor,
    attribute_spans: Vec<Vec<usize>>,
}

/// Each distinct token maps to its own seeded standard-normal `dim`-vector,
/// so prompts that differ in one token differ in exactly that row.
pub fn toy_text_embed(tokens: &[String], seed: u64, dim: usize) -> Result<TextEmbedding> {
    if tokens.is_empty() {
        return Err(Error::Config("prompt has no tokens".into()));
    }
    let gain = (dim as f32).sqrt();
    let mut data = Vec::with_capacity(tokens.len() * dim);
    for tok in tokens {
        let row_seed = derive_seed(seed ^ token_id(tok), "token");
        data.extend(
            seeded_tensor(&[dim], row_seed)?
                .data()
                .iter()
                .map(|v| v * gain),
        );
    }
    Ok(TextEmbedding {
        tokens: tokens.to_vec(),
        data: Tensor::new(vec![tokens.len(), dim], data)?,
        attribute_spans: Vec::new(),
    })
}

impl TextEmbedding {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn attribute_spans(&self) -> &[Vec<usize>] {
        &self.attribute_spans
    }

    /// Attaches attribute token sets; they must be nonempty, disjoint, and in range.
    pub fn with_spans(mut self, spans: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        for span in &spans {
            if span.is_empty() {
                return Err(Error::Config("empty attribute span".into()));
            }
            for &i in span {
                if i >= self.len() {
                    return Err(Error::Config(format!(
                        "span index {i} outside prompt of {} tokens",
                        self.len()
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Config(format!(
                        "token {i} belongs to more than one attribute"
                    )));
                }
            }
        }
        self.attribute_spans = spans;
        Ok(self)
    }

    /// Positions of the first occurrence of `phrase` as a contiguous run.
    pub fn find_phrase(&self, phrase: &str) -> Option<Vec<usize>> {
        let words = tokenize(phrase);
        if words.is_empty() || words.len() > self.len() {
            return None;
        }
        (0..=self.len() - words.len())
            .find(|&s| self.tokens[s..s + words.len()] == words[..])
            .map(|s| (s..s + words.len()).collect())
    }

    /// `I^{τ_m}`: 1 at attribute `m`'s token positions.
    pub fn indicator(&self, attribute: usize) -> Vec<u8> {
        let mut out = vec![0u8; self.len()];
        if let Some(span) = self.attribute_spans.get(attribute) {
            for &i in span {
                out[i] = 1;
            }
        }
        out
    }

    pub fn indicators(&self) -> Vec<Vec<u8>> {
        (0..self.attribute_spans.len())
            .map(|m| self.indicator(m))
            .collect()
    }

    /// Mean of the token rows.
    pub fn mean_embedding(&self) -> Vec<f32> {
        self.mean_over(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Mean over the attribute tokens, or over all tokens when there are no spans.
    pub fn attribute_embedding(&self) -> Vec<f32> {
        let mut rows: Vec<usize> = self.attribute_spans.iter().flatten().copied().collect();
        if rows.is_empty() {
            return self.mean_embedding();
        }
        rows.sort_unstable();
        self.mean_over(&rows)
    }

    fn mean_over(&self, rows: &[usize]) -> Vec<f32> {
        (0..self.dim())
            .map(|c| {
                let sum: f64 = rows.iter().map(|&r| self.data.get2(r, c) as f64).sum();
                (sum / rows.len() as f64) as f32
            })
            .collect()
    }
}
