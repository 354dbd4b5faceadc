//! Dense row-major `f32` tensors and the handful of kernels the backbone needs.
//!
//! Every reduction runs in a fixed loop order with `f64` accumulators, so a
//! given input produces the same bits regardless of how many threads the
//! caller spreads frames across.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a 2-D tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Product of all dimensions but the first.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols() + c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    fn require_2d(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Dimension(format!("{what} must be 2-D, got {s:?}"))),
        }
    }

    fn require_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.require_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.require_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.require_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.require_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{what} contains non-finite values")))
        }
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        let (r, c) = self.require_2d("transpose operand")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }
}

/// `a [R×D] · b [D×C]`, accumulated in `f64` with the inner index ascending.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (r, d) = a.require_2d("matmul lhs")?;
    let (d2, c) = b.require_2d("matmul rhs")?;
    if d != d2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {r}x{d} by {d2}x{c}"
        )));
    }
    let mut out = Vec::with_capacity(r * c);
    let mut acc = vec![0.0f64; c];
    for i in 0..r {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let a_row = &a.data[i * d..(i + 1) * d];
        for (k, &aik) in a_row.iter().enumerate() {
            let aik = aik as f64;
            let b_row = &b.data[k * c..(k + 1) * c];
            for (slot, &bkj) in acc.iter_mut().zip(b_row) {
                *slot += aik * bkj as f64;
            }
        }
        out.extend(acc.iter().map(|&v| v as f32));
    }
    Tensor::new(vec![r, c], out)
}

/// `a [R×D] · bᵀ` for `b [C×D]`; the score kernel `QKᵀ`.
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (r, d) = a.require_2d("matmul_bt lhs")?;
    let (c, d2) = b.require_2d("matmul_bt rhs")?;
    if d != d2 {
        return Err(Error::Dimension(format!(
            "matmul_bt inner dimensions differ: {r}x{d} by ({c}x{d2})ᵀ"
        )));
    }
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let a_row = &a.data[i * d..(i + 1) * d];
        for j in 0..c {
            out.push(dot(a_row, &b.data[j * d..(j + 1) * d]) as f32);
        }
    }
    Tensor::new(vec![r, c], out)
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(scores: &Tensor) -> Result<Tensor> {
    let (r, c) = scores.require_2d("softmax input")?;
    scores.ensure_finite("softmax input")?;
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = &scores.data[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / sum) as f32));
    }
    Tensor::new(vec![r, c], out)
}

/// Per-row normalisation to zero mean and unit variance, without affine terms.
pub fn layer_norm_rows(x: &Tensor) -> Result<Tensor> {
    let (r, c) = x.require_2d("layer norm input")?;
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = &x.data[i * c..(i + 1) * c];
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        out.extend(row.iter().map(|&v| ((v as f64 - mean) * inv) as f32));
    }
    Tensor::new(vec![r, c], out)
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "cosine operands have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector("zero-norm vector in cosine".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 − cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Standard-normal values scaled by `1/√fan_in`, where `fan_in` is the last
/// dimension. Values come from a ChaCha20 stream seeded with `seed`, so the
/// same `(shape, seed)` always yields the same bits.
pub fn seeded_tensor(shape: &[usize], seed: u64) -> Result<Tensor> {
    let fan_in = *shape
        .last()
        .ok_or_else(|| Error::Shape("seeded tensor needs a nonempty shape".into()))?;
    if fan_in == 0 {
        return Err(Error::Shape("seeded tensor with a zero dimension".into()));
    }
    let scale = 1.0 / (fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = (0..len)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            (v * scale) as f32
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Mixes a base seed with a tag so each weight tensor gets its own stream.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    h.write(tag.as_bytes());
    splitmix64(base ^ h.finish())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(rows: &[&[f32]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let m = t(&[&[1.5, -2.0], &[0.25, 4.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &m).unwrap(), m);
        let z = matmul(&Tensor::zeros(vec![2, 2]), &m).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_hand_case() {
        let out = matmul(&t(&[&[1.0, 2.0], &[3.0, 4.0]]), &t(&[&[1.0], &[1.0]])).unwrap();
        assert_eq!(out.shape(), &[2, 1]);
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let err = matmul(&Tensor::zeros(vec![2, 3]), &Tensor::zeros(vec![2, 2]));
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_bt_matches_transpose() {
        let a = seeded_tensor(&[3, 5], 1).unwrap();
        let b = seeded_tensor(&[4, 5], 2).unwrap();
        let direct = matmul_bt(&a, &b).unwrap();
        let via = matmul(&a, &b.transpose2().unwrap()).unwrap();
        assert!(direct.max_abs_diff(&via).unwrap() < 1e-6);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&t(&[&[0.0, 0.0]])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&t(&[&[-3.0, -3.0, -3.0, -3.0]])).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        let s = softmax_rows(&t(&[&[std::f32::consts::LN_2, 0.0]])).unwrap();
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-6);
        assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(softmax_rows(&t(&[&[f32::NAN, 0.0]])).is_err());
    }

    #[test]
    fn cosine_examples() {
        let a = [1.0, 2.0, 3.0];
        assert!(cosine_distance(&a, &a).unwrap().abs() < 1e-12);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_distance(&a, &[-1.0, -2.0, -3.0]).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(
            cosine_distance(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn seeded_is_deterministic() {
        let a = seeded_tensor(&[4, 4], 7).unwrap();
        assert_eq!(a, seeded_tensor(&[4, 4], 7).unwrap());
        assert_ne!(a, seeded_tensor(&[4, 4], 8).unwrap());
    }

    #[test]
    fn seeded_sample_mean_is_centered() {
        // entries are N(0, 1/4); the mean of 16 has sd 1/8, so 3 sd = 0.375
        let a = seeded_tensor(&[4, 4], 7).unwrap();
        let mean: f64 = a.data().iter().map(|&v| v as f64).sum::<f64>() / 16.0;
        assert!(mean.abs() < 3.0 * 0.5 / 4.0, "mean {mean}");
    }

    #[test]
    fn derive_seed_separates_tags() {
        assert_ne!(derive_seed(1, "w_q"), derive_seed(1, "w_k"));
        assert_eq!(derive_seed(1, "w_q"), derive_seed(1, "w_q"));
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(row in proptest::collection::vec(-50.0f32..50.0, 1..20)) {
            let s = softmax_rows(&Tensor::new(vec![1, row.len()], row).unwrap()).unwrap();
            let sum: f64 = s.data().iter().map(|&v| v as f64).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6);
            prop_assert!(s.data().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn softmax_shift_invariant(
            row in proptest::collection::vec(-50.0f32..50.0, 1..20),
            c in -20.0f32..20.0,
        ) {
            let n = row.len();
            let shifted: Vec<f32> = row.iter().map(|v| v + c).collect();
            let a = softmax_rows(&Tensor::new(vec![1, n], row).unwrap()).unwrap();
            let b = softmax_rows(&Tensor::new(vec![1, n], shifted).unwrap()).unwrap();
            prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-6);
        }

        #[test]
        fn cosine_symmetric(
            a in proptest::collection::vec(0.1f32..5.0, 4),
            b in proptest::collection::vec(-5.0f32..5.0, 4),
        ) {
            prop_assume!(norm(&b) > 1e-3);
            let ab = cosine_distance(&a, &b).unwrap();
            let ba = cosine_distance(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(cosine_distance(&a, &a).unwrap().abs() < 1e-9);
            prop_assert!((0.0..=2.0).contains(&ab));
        }

        #[test]
        fn matmul_associative(seed in 0u64..500) {
            let a = seeded_tensor(&[3, 4], seed).unwrap();
            let b = seeded_tensor(&[4, 2], seed + 1000).unwrap();
            let c = seeded_tensor(&[2, 5], seed + 2000).unwrap();
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right).unwrap() <= 1e-4);
        }
    }
}
