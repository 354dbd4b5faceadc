use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// A `{0,1}` mask in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} given {} values",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Shape("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value as u8; height * width],
        }
    }

    /// Thresholds 8-bit samples: `>= 128` becomes 1.
    pub fn from_gray(height: usize, width: usize, gray: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            gray.iter().map(|&g| (g >= 128) as u8).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn overlaps(&self, other: &BinaryMask) -> bool {
        self.data
            .iter()
            .zip(&other.data)
            .any(|(&a, &b)| a == 1 && b == 1)
    }
}

/// Block-average each `H/h × W/w` cell and threshold at 0.5, ties to 1.
pub fn downsample_mask(mask: &BinaryMask, height: usize, width: usize) -> Result<BinaryMask> {
    if height == 0
        || width == 0
        || mask.height < height
        || mask.width < width
        || !mask.height.is_multiple_of(height)
        || !mask.width.is_multiple_of(width)
    {
        return Err(Error::Shape(format!(
            "cannot downsample a {}x{} mask to {height}x{width}",
            mask.height, mask.width
        )));
    }
    let (bh, bw) = (mask.height / height, mask.width / width);
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let mut on = 0usize;
            for dy in 0..bh {
                let row = (y * bh + dy) * mask.width + x * bw;
                on += mask.data[row..row + bw]
                    .iter()
                    .map(|&v| v as usize)
                    .sum::<usize>();
            }
            // on / (bh·bw) >= 0.5
            out.push((2 * on >= bh * bw) as u8);
        }
    }
    BinaryMask::new(height, width, out)
}

/// Per-attribute, per-frame masks at source resolution, plus downsampled
/// copies for each attention resolution that has been requested.
#[derive(Debug, Clone)]
pub struct MaskSet {
    source: Vec<Vec<BinaryMask>>,
    cache: BTreeMap<(usize, usize), Vec<Vec<BinaryMask>>>,
}

impl MaskSet {
    /// `masks[attribute][frame]`; every attribute must cover the same frames
    /// at one shared resolution.
    pub fn new(masks: Vec<Vec<BinaryMask>>) -> Result<Self> {
        let frames = masks.first().map_or(0, Vec::len);
        if masks.iter().any(|a| a.len() != frames) {
            return Err(Error::Manifest(
                "every attribute needs a mask for every frame".into(),
            ));
        }
        if let Some(first) = masks.first().and_then(|a| a.first()) {
            let dims = (first.height, first.width);
            if masks.iter().flatten().any(|m| (m.height, m.width) != dims) {
                return Err(Error::Manifest("masks differ in resolution".into()));
            }
        }
        Ok(Self {
            source: masks,
            cache: BTreeMap::new(),
        })
    }

    pub fn attributes(&self) -> usize {
        self.source.len()
    }

    pub fn frames(&self) -> usize {
        self.source.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.attributes() * self.frames()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn source(&self, attribute: usize, frame: usize) -> &BinaryMask {
        &self.source[attribute][frame]
    }

    pub fn source_resolution(&self) -> Option<(usize, usize)> {
        self.source
            .first()
            .and_then(|a| a.first())
            .map(|m| (m.height, m.width))
    }

    /// Populates the downsampled cache for `(h, w)`.
    pub fn prepare(&mut self, height: usize, width: usize) -> Result<()> {
        if self.cache.contains_key(&(height, width)) {
            return Ok(());
        }
        let level = self
            .source
            .iter()
            .map(|frames| {
                frames
                    .iter()
                    .map(|m| downsample_mask(m, height, width))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        self.cache.insert((height, width), level);
        Ok(())
    }

    /// `[attribute][frame]` masks at a prepared resolution.
    pub fn at(&self, height: usize, width: usize) -> Result<&[Vec<BinaryMask>]> {
        self.cache
            .get(&(height, width))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Shape(format!("mask resolution {height}x{width} not prepared")))
    }

    pub fn resolutions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cache.keys().copied()
    }

    /// Attribute pairs whose masks share a token in some frame at `(h, w)`.
    pub fn overlapping_pairs(&self, height: usize, width: usize) -> Result<Vec<(usize, usize)>> {
        let level = self.at(height, width)?;
        let mut pairs = Vec::new();
        for a in 0..level.len() {
            for b in a + 1..level.len() {
                if level[a].iter().zip(&level[b]).any(|(x, y)| x.overlaps(y)) {
                    pairs.push((a, b));
                }
            }
        }
        Ok(pairs)
    }
}
