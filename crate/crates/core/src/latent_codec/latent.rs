use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, matmul_bt, seeded_tensor, Tensor};

pub const LATENT_MAGIC: &[u8; 4] = b"MKLT";

/// RGB frames, `N × H × W × 3`, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbVideo {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RgbVideo {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * height * width * 3 {
            return Err(Error::Dimension(format!(
                "rgb video {frames}x{height}x{width}x3 given {} values",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn pixel(&self, frame: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[((frame * self.height + y) * self.width + x) * 3 + c]
    }
}

/// Per-frame latents laid out `[N × C × h × w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Tensor,
}

impl LatentVideo {
    pub fn new(data: Tensor) -> Result<Self> {
        let &[frames, channels, height, width] = data.shape() else {
            return Err(Error::Shape(format!(
                "latent video must be 4-D, got {:?}",
                data.shape()
            )));
        };
        if frames == 0 || channels == 0 || height < 4 || width < 4 {
            return Err(Error::Shape(format!(
                "latent video needs N,C >= 1 and h,w >= 4, got {:?}",
                data.shape()
            )));
        }
        Ok(Self {
            frames,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn frame_slice(&self, i: usize) -> &[f32] {
        let n = self.channels * self.height * self.width;
        &self.data.data()[i * n..(i + 1) * n]
    }

    /// Frame `i` as a token matrix `[hw × C]`, tokens in row-major spatial order.
    pub fn frame_tokens(&self, i: usize) -> Tensor {
        let hw = self.tokens_per_frame();
        let src = self.frame_slice(i);
        let mut out = vec![0.0; hw * self.channels];
        for c in 0..self.channels {
            for p in 0..hw {
                out[p * self.channels + c] = src[c * hw + p];
            }
        }
        Tensor::new(vec![hw, self.channels], out).expect("token layout")
    }

    /// Inverse of [`frame_tokens`](Self::frame_tokens) over all frames.
    pub fn from_frame_tokens(tokens: &[Tensor], height: usize, width: usize) -> Result<Self> {
        let hw = height * width;
        let channels = tokens.first().map_or(0, Tensor::cols);
        let mut data = Vec::with_capacity(tokens.len() * channels * hw);
        for t in tokens {
            if t.shape() != [hw, channels] {
                return Err(Error::Dimension(format!(
                    "frame tokens {:?}, expected [{hw}, {channels}]",
                    t.shape()
                )));
            }
            for c in 0..channels {
                data.extend((0..hw).map(|p| t.data()[p * channels + c]));
            }
        }
        Self::new(Tensor::new(
            vec![tokens.len(), channels, height, width],
            data,
        )?)
    }

    pub fn with_data(&self, data: Tensor) -> Result<Self> {
        if data.shape() != self.data.shape() {
            return Err(Error::Dimension(format!(
                "latent shape {:?} does not match {:?}",
                data.shape(),
                self.data.shape()
            )));
        }
        Self::new(data)
    }

    pub fn max_abs_diff(&self, other: &LatentVideo) -> Result<f32> {
        self.data.max_abs_diff(&other.data)
    }

    /// Mean Euclidean distance between corresponding frames.
    pub fn mean_frame_distance(&self, other: &LatentVideo) -> Result<f64> {
        let diff = self.data.sub(&other.data)?;
        let per = self.channels * self.height * self.width;
        let total: f64 = diff
            .data()
            .chunks(per)
            .map(|f| f.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt())
            .sum();
        Ok(total / self.frames as f64)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(LATENT_MAGIC)?;
        for dim in [self.frames, self.channels, self.height, self.width] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for v in self.data.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + self.data.len() * 4);
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 20];
        r.read_exact(&mut header)
            .map_err(|e| Error::Shape(format!("truncated latent header: {e}")))?;
        if &header[..4] != LATENT_MAGIC {
            return Err(Error::Shape("bad latent magic".into()));
        }
        let dims: Vec<usize> = header[4..]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .collect();
        let len: usize = dims.iter().product();
        let mut payload = vec![0u8; len * 4];
        r.read_exact(&mut payload)
            .map_err(|e| Error::Shape(format!("truncated latent payload: {e}")))?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(Tensor::new(dims, data)?)
    }
}

/// Linear patch encoder standing in for a VAE.
///
/// Each non-overlapping `patch × patch` RGB block is flattened in
/// `(y, x, channel)` order and projected to `channels` values by a seeded
/// matrix without bias.
pub fn encode_frames(
    video: &RgbVideo,
    patch: usize,
    channels: usize,
    seed: u64,
) -> Result<LatentVideo> {
    if patch == 0 || !video.height.is_multiple_of(patch) || !video.width.is_multiple_of(patch) {
        return Err(Error::Shape(format!(
            "frame size {}x{} is not divisible by patch {patch}",
            video.height, video.width
        )));
    }
    let (h, w) = (video.height / patch, video.width / patch);
    let fan_in = patch * patch * 3;
    let proj = seeded_tensor(&[channels, fan_in], derive_seed(seed, "encoder"))?;

    let mut data = Vec::with_capacity(video.frames * channels * h * w);
    for f in 0..video.frames {
        let mut patches = Vec::with_capacity(h * w * fan_in);
        for py in 0..h {
            for px in 0..w {
                for y in 0..patch {
                    for x in 0..patch {
                        for c in 0..3 {
                            patches.push(video.pixel(f, py * patch + y, px * patch + x, c));
                        }
                    }
                }
            }
        }
        let tokens = matmul_bt(&Tensor::new(vec![h * w, fan_in], patches)?, &proj)?;
        for c in 0..channels {
            data.extend((0..h * w).map(|p| tokens.get2(p, c)));
        }
    }
    LatentVideo::new(Tensor::new(vec![video.frames, channels, h, w], data)?)
}
