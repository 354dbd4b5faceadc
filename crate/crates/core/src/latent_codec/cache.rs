use std::collections::BTreeMap;

use crate::numerics::Tensor;

/// Source query/key projections of one frame at one self-attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceQk {
    pub q: Tensor,
    pub k: Tensor,
}

/// Everything one predictor branch recorded at one timestep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BranchRecord {
    /// layer id → per-frame `Q`/`K`
    pub qk: BTreeMap<usize, Vec<SourceQk>>,
    /// layer id → per-frame conv-block output `[hw × d]`
    pub features: BTreeMap<usize, Vec<Tensor>>,
}

/// All branches evaluated at one timestep (index = branch id).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepRecord {
    pub branches: Vec<BranchRecord>,
}

impl StepRecord {
    pub fn branch(&self, id: usize) -> Option<&BranchRecord> {
        self.branches.get(id)
    }
}

/// Source activations captured during inversion, keyed by train timestep.
///
/// Only [`ddim_invert`](super::ddim_invert) fills it; afterwards it is handed
/// out by shared reference only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionCache {
    steps: BTreeMap<usize, StepRecord>,
}

impl AttentionCache {
    pub(crate) fn insert(&mut self, t: usize, record: StepRecord) {
        self.steps.insert(t, record);
    }

    pub fn get(&self, t: usize) -> Option<&StepRecord> {
        self.steps.get(&t)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn timesteps(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.keys().copied()
    }

    /// Number of timesteps holding `Q`/`K` for `layer` in branch `branch`.
    pub fn qk_entries(&self, branch: usize, layer: usize) -> usize {
        self.steps
            .values()
            .filter(|s| s.branch(branch).is_some_and(|b| b.qk.contains_key(&layer)))
            .count()
    }

    pub fn feature_entries(&self, branch: usize, layer: usize) -> usize {
        self.steps
            .values()
            .filter(|s| {
                s.branch(branch)
                    .is_some_and(|b| b.features.contains_key(&layer))
            })
            .count()
    }

    /// Deterministic byte serialization (ordered maps, little-endian floats).
    pub fn to_bytes(&self) -> Vec<u8> {
        fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
            out.extend((t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend((*d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        let mut out = Vec::new();
        for (t, step) in &self.steps {
            out.extend((*t as u32).to_le_bytes());
            for (b, branch) in step.branches.iter().enumerate() {
                out.extend((b as u32).to_le_bytes());
                for (layer, frames) in &branch.qk {
                    out.extend((*layer as u32).to_le_bytes());
                    for qk in frames {
                        put_tensor(&mut out, &qk.q);
                        put_tensor(&mut out, &qk.k);
                    }
                }
                for (layer, frames) in &branch.features {
                    out.extend((*layer as u32 | 0x8000_0000).to_le_bytes());
                    for f in frames {
                        put_tensor(&mut out, f);
                    }
                }
            }
        }
        out
    }
}
