use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::latent_codec::RgbVideo;
use crate::modulation::{BinaryMask, MaskSet};

/// Parsed manifest text, before any file is touched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub frames: PathBuf,
    /// `(target span, mask path pattern)` per attribute, in index order.
    pub attributes: Vec<(String, String)>,
}

impl Manifest {
    /// Lines are `frames: <dir>` and `attribute <m> "<span>": <pattern>`,
    /// where the pattern contains `{i}` for the frame index. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut frames = None;
        let mut attributes: Vec<Option<(String, String)>> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let bad = |why: &str| Error::Manifest(format!("line {}: {why}: {raw:?}", n + 1));
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(dir) = line.strip_prefix("frames:") {
                if frames.replace(PathBuf::from(dir.trim())).is_some() {
                    return Err(bad("duplicate frames entry"));
                }
                continue;
            }
            let rest = line
                .strip_prefix("attribute ")
                .ok_or_else(|| bad("unrecognised entry"))?;
            let (idx, rest) = rest.split_once(' ').ok_or_else(|| bad("missing span"))?;
            let m: usize = idx
                .parse()
                .map_err(|_| bad("attribute index is not a number"))?;
            let rest = rest
                .trim_start()
                .strip_prefix('"')
                .ok_or_else(|| bad("span must be quoted"))?;
            let (span, rest) = rest
                .split_once('"')
                .ok_or_else(|| bad("unterminated span"))?;
            let pattern = rest
                .trim_start()
                .strip_prefix(':')
                .ok_or_else(|| bad("missing ':' before mask pattern"))?
                .trim();
            if span.trim().is_empty() {
                return Err(bad("empty span"));
            }
            if !pattern.contains("{i}") {
                return Err(bad("mask pattern needs an {i} placeholder"));
            }
            if attributes.len() <= m {
                attributes.resize(m + 1, None);
            }
            if attributes[m]
                .replace((span.trim().to_string(), pattern.to_string()))
                .is_some()
            {
                return Err(bad("duplicate attribute index"));
            }
        }
        let frames = frames.ok_or_else(|| Error::Manifest("no frames entry".into()))?;
        let attributes = attributes
            .into_iter()
            .enumerate()
            .map(|(m, a)| a.ok_or_else(|| Error::Manifest(format!("attribute {m} is missing"))))
            .collect::<Result<Vec<_>>>()?;
        if attributes.is_empty() {
            return Err(Error::Manifest("no attributes listed".into()));
        }
        Ok(Self { frames, attributes })
    }
}

/// Frames, masks and attribute spans gathered from a manifest.
#[derive(Debug, Clone)]
pub struct EditInputs {
    pub video: RgbVideo,
    pub masks: MaskSet,
    /// Target-prompt span of each attribute.
    pub attribute_spans: Vec<String>,
    /// Mask pixels that were neither 0 nor 255.
    pub nonbinary_mask_pixels: usize,
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, other),
        ),
    }
}

fn is_frame_file(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "ppm" | "pnm")
    )
}

/// Up to `max_frames` images from `dir`, in file name order, as RGB in `[0, 1]`.
pub fn load_frames(dir: &Path, max_frames: usize) -> Result<RgbVideo> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| is_frame_file(p))
        .collect();
    paths.sort();
    paths.truncate(max_frames);
    if paths.is_empty() {
        return Err(Error::Manifest(format!(
            "no frames found in {}",
            dir.display()
        )));
    }
    let mut dims = None;
    let mut data = Vec::new();
    for p in &paths {
        let img = image::open(p).map_err(|e| image_error(p, e))?.to_rgb8();
        let d = img.dimensions();
        if *dims.get_or_insert(d) != d {
            return Err(Error::Manifest(format!(
                "{} is {}x{}, earlier frames are {}x{}",
                p.display(),
                d.0,
                d.1,
                dims.unwrap().0,
                dims.unwrap().1
            )));
        }
        data.extend(img.as_raw().iter().map(|&v| v as f32 / 255.0));
    }
    let (w, h) = dims.expect("at least one frame");
    RgbVideo::new(paths.len(), h as usize, w as usize, data)
}

/// Reads an 8-bit grayscale mask; returns it with its count of pixels that
/// were neither 0 nor 255.
pub fn load_mask(path: &Path) -> Result<(BinaryMask, usize)> {
    let img = image::open(path)
        .map_err(|e| image_error(path, e))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let gray = img.as_raw();
    let nonbinary = gray.iter().filter(|&&v| v != 0 && v != 255).count();
    Ok((
        BinaryMask::from_gray(h as usize, w as usize, gray)?,
        nonbinary,
    ))
}

/// Parses the manifest at `path` and loads everything it references.
/// Paths inside it are relative to its directory; `frames_override`
/// replaces its frame directory.
pub fn load_manifest(
    path: &Path,
    frames_override: Option<&Path>,
    max_frames: usize,
) -> Result<EditInputs> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = Manifest::parse(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let frame_dir = frames_override.map_or_else(|| base.join(&manifest.frames), Path::to_path_buf);
    let video = load_frames(&frame_dir, max_frames)?;

    let mut nonbinary = 0;
    let mut masks = Vec::with_capacity(manifest.attributes.len());
    for (m, (_, pattern)) in manifest.attributes.iter().enumerate() {
        let mut frames = Vec::with_capacity(video.frames);
        for i in 0..video.frames {
            let p = base.join(pattern.replace("{i}", &i.to_string()));
            let (mask, odd) = load_mask(&p)?;
            if (mask.height(), mask.width()) != (video.height, video.width) {
                return Err(Error::Manifest(format!(
                    "mask {} is {}x{} but frames are {}x{}",
                    p.display(),
                    mask.width(),
                    mask.height(),
                    video.width,
                    video.height
                )));
            }
            if odd > 0 {
                log::warn!(
                    "attribute {m} frame {i}: {odd} non-binary pixels in {}, thresholded at 128",
                    p.display()
                );
            }
            nonbinary += odd;
            frames.push(mask);
        }
        masks.push(frames);
    }
    Ok(EditInputs {
        video,
        masks: MaskSet::new(masks)?,
        attribute_spans: manifest.attributes.into_iter().map(|(s, _)| s).collect(),
        nonbinary_mask_pixels: nonbinary,
    })
}

/// Box-averages frames by the smallest integer factor that brings both
/// sides within `max_side` while keeping them multiples of `patch`.
pub fn fit_video(video: &RgbVideo, max_side: usize, patch: usize) -> Result<RgbVideo> {
    let (h, w) = (video.height, video.width);
    let factor = (1..=h.max(w))
        .find(|&f| {
            h % f == 0
                && w % f == 0
                && (h / f).max(w / f) <= max_side
                && (h / f) % patch == 0
                && (w / f) % patch == 0
        })
        .ok_or_else(|| {
            Error::Config(format!(
                "{w}x{h} frames cannot be reduced to at most {max_side} pixels per side in \
                 multiples of {patch}"
            ))
        })?;
    if factor == 1 {
        return Ok(video.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut data = Vec::with_capacity(video.frames * oh * ow * 3);
    for f in 0..video.frames {
        for y in 0..oh {
            for x in 0..ow {
                for c in 0..3 {
                    let mut acc = 0.0f64;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += video.pixel(f, y * factor + dy, x * factor + dx, c) as f64;
                        }
                    }
                    data.push((acc * norm) as f32);
                }
            }
        }
    }
    RgbVideo::new(video.frames, oh, ow, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_manifest() {
        let m = Manifest::parse(
            "# demo\nframes: clip\nattribute 1 \"green grass\": masks/a1_{i}.pgm\n\
             attribute 0 \"red car\" : masks/a0_{i}.pgm\n",
        )
        .unwrap();
        assert_eq!(m.frames, PathBuf::from("clip"));
        assert_eq!(
            m.attributes[0],
            ("red car".into(), "masks/a0_{i}.pgm".into())
        );
        assert_eq!(m.attributes[1].0, "green grass");
    }

    #[test]
    fn parse_errors() {
        for text in [
            "attribute 0 \"x\": m{i}.pgm\n",
            "frames: a\n",
            "frames: a\nattribute 1 \"x\": m{i}.pgm\n",
            "frames: a\nattribute 0 x: m{i}.pgm\n",
            "frames: a\nattribute 0 \"x\": m.pgm\n",
            "frames: a\nattribute 0 \"x\": m{i}.pgm\nattribute 0 \"y\": n{i}.pgm\n",
            "frames: a\nbogus\n",
        ] {
            assert!(
                matches!(Manifest::parse(text), Err(Error::Manifest(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn fit_video_box_average() {
        let mut data = Vec::new();
        for y in 0..32 {
            for _x in 0..16 {
                data.extend([y as f32, 0.0, 1.0]);
            }
        }
        let v = RgbVideo::new(1, 32, 16, data).unwrap();
        let small = fit_video(&v, 16, 8).unwrap();
        assert_eq!((small.height, small.width), (16, 8));
        assert_eq!(small.pixel(0, 3, 5, 0), 6.5);
        assert_eq!(small.pixel(0, 3, 5, 2), 1.0);
        assert_eq!(fit_video(&v, 64, 8).unwrap(), v);
        assert!(matches!(fit_video(&v, 4, 8), Err(Error::Config(_))));
    }
}
