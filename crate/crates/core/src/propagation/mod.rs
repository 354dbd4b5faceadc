//! Keyframe selection and propagation of keyframe attention outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_distance, Tensor};

/// How the blending ratio is squashed into `w1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMode {
    #[default]
    Logistic,
    Identity,
}

impl std::str::FromStr for SigmaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Self::Logistic),
            "identity" => Ok(Self::Identity),
            other => Err(Error::Config(format!("unknown sigma mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for SigmaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Logistic => "logistic",
            Self::Identity => "identity",
        })
    }
}

fn distance_matrix(features: &[Vec<f32>]) -> Result<Vec<Vec<f64>>> {
    let n = features.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = cosine_distance(&features[i], &features[j])
                .map_err(|e| e.context(format!("keyframe features {i},{j}")))?;
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

/// Smallest pairwise cosine distance within `subset` (`+∞` below two frames).
pub fn min_pairwise_distance(features: &[Vec<f32>], subset: &[usize]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            best = best.min(cosine_distance(&features[i], &features[j])?);
        }
    }
    Ok(best)
}

/// Lexicographically first `k`-subset whose pairwise distances are all `>= θ`.
fn first_spread_subset(dist: &[Vec<f64>], k: usize, theta: f64) -> Option<Vec<usize>> {
    fn extend(
        dist: &[Vec<f64>],
        k: usize,
        theta: f64,
        next: usize,
        chosen: &mut Vec<usize>,
    ) -> bool {
        if chosen.len() == k {
            return true;
        }
        let n = dist.len();
        for c in next..n {
            if n - c < k - chosen.len() {
                break;
            }
            if chosen.iter().all(|&s| dist[s][c] >= theta) {
                chosen.push(c);
                if extend(dist, k, theta, c + 1, chosen) {
                    return true;
                }
                chosen.pop();
            }
        }
        false
    }
    let mut chosen = Vec::with_capacity(k);
    extend(dist, k, theta, 0, &mut chosen).then_some(chosen)
}

/// Picks `k` frames maximizing their minimum pairwise cosine distance.
///
/// Binary search runs over the sorted distinct pairwise distances; each probe
/// asks whether `k` frames exist that are pairwise at least that far apart,
/// scanning frames in ascending order with backtracking. Among optimal sets
/// the lexicographically smallest is returned.
pub fn select_keyframes(features: &[Vec<f32>], k: usize) -> Result<Vec<usize>> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "cannot select {k} keyframes from {n} frames"
        )));
    }
    let dist = distance_matrix(features)?;
    if n == 1 || k == 1 {
        if n == 1 {
            crate::numerics::norm(&features[0])
                .gt(&0.0)
                .then_some(())
                .ok_or_else(|| Error::DegenerateVector("zero keyframe feature".into()))?;
        }
        return Ok(vec![0]);
    }
    let mut candidates: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| dist[i][j])
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // candidates[0] is always feasible: every pair is at least the global minimum.
    let (mut lo, mut hi) = (0usize, candidates.len() - 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if first_spread_subset(&dist, k, candidates[mid]).is_some() {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(first_spread_subset(&dist, k, candidates[lo]).expect("feasible threshold"))
}

/// All frames ordered by diversity: the optimal `count`-subset first, then
/// the remaining frames farthest-first (ties to the lower index).
pub fn diversity_ranking(features: &[Vec<f32>], count: usize) -> Result<Vec<usize>> {
    let n = features.len();
    let mut ranked = select_keyframes(features, count.clamp(1, n))?;
    let dist = distance_matrix(features)?;
    let mut remaining: Vec<usize> = (0..n).filter(|i| !ranked.contains(i)).collect();
    while !remaining.is_empty() {
        let (pos, _) = remaining
            .iter()
            .enumerate()
            .map(|(pos, &c)| {
                let spread = ranked
                    .iter()
                    .map(|&r| dist[r][c])
                    .fold(f64::INFINITY, f64::min);
                (pos, spread)
            })
            .fold((0, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
        ranked.push(remaining.remove(pos));
    }
    Ok(ranked)
}

/// `count` entries of `ranking` starting at `step mod N`, sorted.
pub fn per_step_keyframe_rotation(
    ranking: &[usize],
    step_index: usize,
    count: usize,
) -> Vec<usize> {
    let n = ranking.len();
    if n == 0 {
        return Vec::new();
    }
    let start = step_index % n;
    let mut picked: Vec<usize> = (0..count.min(n))
        .map(|j| ranking[(start + j) % n])
        .collect();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbours {
    pub k1: usize,
    pub k2: usize,
    pub d1: usize,
    pub d2: usize,
}

/// Keyframes bracketing non-keyframe `i`; at either end of the sequence the
/// two nearest keyframes (ties to the lower index) are used instead.
pub fn nearest_keyframes(i: usize, keyframes: &[usize]) -> Result<Neighbours> {
    if keyframes.len() < 2 {
        return Err(Error::Propagation(format!(
            "need at least two keyframes, have {}",
            keyframes.len()
        )));
    }
    if keyframes.contains(&i) {
        return Err(Error::Propagation(format!("frame {i} is a keyframe")));
    }
    let before = keyframes.iter().copied().filter(|&k| k < i).max();
    let after = keyframes.iter().copied().filter(|&k| k > i).min();
    let (k1, k2) = match (before, after) {
        (Some(b), Some(a)) => (b, a),
        _ => {
            let mut by_distance = keyframes.to_vec();
            by_distance.sort_by_key(|&k| (k.abs_diff(i), k));
            (by_distance[0], by_distance[1])
        }
    };
    Ok(Neighbours {
        k1,
        k2,
        d1: k1.abs_diff(i),
        d2: k2.abs_diff(i),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationWeight {
    pub w1: f64,
    pub w_temp: f64,
    /// `None` when the ratio's denominator vanished and `w1` fell back to `w_temp`.
    pub ratio: Option<f64>,
}

impl PropagationWeight {
    pub fn is_fallback(&self) -> bool {
        self.ratio.is_none()
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `w_temp = d2/(d1+d2)`, `r = w_temp·s1 / (w_temp·s1 + (1−w_temp)·s2)`,
/// `w1 = σ(r)`. Negative similarities count as 0.
pub fn propagation_weight(
    d1: f64,
    d2: f64,
    sim1: f64,
    sim2: f64,
    mode: SigmaMode,
) -> Result<PropagationWeight> {
    if !(d1 >= 0.0 && d2 >= 0.0 && d1 + d2 > 0.0) {
        return Err(Error::Propagation(format!(
            "keyframe distances {d1}, {d2} must be nonnegative with a positive sum"
        )));
    }
    let (s1, s2) = (sim1.max(0.0), sim2.max(0.0));
    let w_temp = d2 / (d1 + d2);
    let denom = w_temp * s1 + (1.0 - w_temp) * s2;
    if denom <= 1e-8 {
        log::debug!("propagation weight denominator {denom:e}; using w_temp");
        return Ok(PropagationWeight {
            w1: w_temp,
            w_temp,
            ratio: None,
        });
    }
    let r = w_temp * s1 / denom;
    let w1 = match mode {
        SigmaMode::Logistic => logistic(r),
        SigmaMode::Identity => r,
    };
    Ok(PropagationWeight {
        w1,
        w_temp,
        ratio: Some(r),
    })
}

/// `w1·a + (1−w1)·b`, token-wise.
pub fn blend_attention(out_k1: &Tensor, out_k2: &Tensor, w1: f64) -> Result<Tensor> {
    if out_k1.shape() != out_k2.shape() {
        return Err(Error::Propagation(format!(
            "keyframe outputs {:?} and {:?} differ in shape",
            out_k1.shape(),
            out_k2.shape()
        )));
    }
    if !(0.0..=1.0).contains(&w1) {
        return Err(Error::Propagation(format!(
            "blend weight {w1} outside [0, 1]"
        )));
    }
    if w1 == 1.0 {
        return Ok(out_k1.clone());
    }
    if w1 == 0.0 {
        return Ok(out_k2.clone());
    }
    let (a, b) = (w1 as f32, (1.0 - w1) as f32);
    let data = out_k1
        .data()
        .iter()
        .zip(out_k2.data())
        .map(|(&x, &y)| a * x + b * y)
        .collect();
    Tensor::new(out_k1.shape().to_vec(), data)
}

/// Where a frame's self-attention output comes from during one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameSource {
    Blend(Neighbours),
    /// Fewer than two keyframes: copy the only one.
    Copy(usize),
}

/// Keyframes of one denoising step and the sources for every other frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StepKeyframes {
    pub step: usize,
    pub keyframes: Vec<usize>,
    pub sources: BTreeMap<usize, FrameSource>,
}

impl StepKeyframes {
    pub fn new(step: usize, keyframes: Vec<usize>, frames: usize) -> Result<Self> {
        if keyframes.is_empty() || keyframes.iter().any(|&k| k >= frames) {
            return Err(Error::Propagation(format!(
                "invalid keyframes {keyframes:?} for {frames} frames"
            )));
        }
        let mut sources = BTreeMap::new();
        for i in (0..frames).filter(|i| !keyframes.contains(i)) {
            let src = if keyframes.len() < 2 {
                FrameSource::Copy(keyframes[0])
            } else {
                FrameSource::Blend(nearest_keyframes(i, &keyframes)?)
            };
            sources.insert(i, src);
        }
        Ok(Self {
            step,
            keyframes,
            sources,
        })
    }

    pub fn is_keyframe(&self, i: usize) -> bool {
        self.keyframes.contains(&i)
    }

    pub fn copy_fallbacks(&self) -> usize {
        self.sources
            .values()
            .filter(|s| matches!(s, FrameSource::Copy(_)))
            .count()
    }
}

/// One blended frame at one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendRecord {
    pub layer: usize,
    pub frame: usize,
    pub k1: usize,
    pub k2: usize,
    pub d1: usize,
    pub d2: usize,
    pub sim1: f64,
    pub sim2: f64,
    pub w_temp: f64,
    pub w1: f64,
}

/// Per-step keyframes plus every blend performed on the conditional branch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyframePlan {
    pub steps: Vec<(StepKeyframes, Vec<BlendRecord>)>,
}

impl KeyframePlan {
    /// Line-oriented dump: `step <s> <idx>...`, then per layer
    /// `layer <id>` followed by `frame <i> <k1> <k2> <w1>` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (step, blends) in &self.steps {
            let idx: Vec<String> = step.keyframes.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "step {} {}", step.step, idx.join(" "));
            let mut current_layer = None;
            for b in blends {
                if current_layer != Some(b.layer) {
                    let _ = writeln!(out, "layer {}", b.layer);
                    current_layer = Some(b.layer);
                }
                let _ = writeln!(out, "frame {} {} {} {:.9}", b.frame, b.k1, b.k2, b.w1);
            }
        }
        out
    }
}
