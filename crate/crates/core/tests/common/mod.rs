#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use makima_core::numerics::seeded_tensor;

/// An axis-aligned box that slides `dx` pixels per frame.
#[derive(Debug, Clone)]
pub struct Region {
    pub span: String,
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
    pub dx: usize,
    pub color: [u8; 3],
}

impl Region {
    pub fn contains(&self, frame: usize, y: usize, x: usize) -> bool {
        let x0 = self.x + self.dx * frame;
        y >= self.y && y < self.y + self.h && x >= x0 && x < x0 + self.w
    }
}

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub frames: usize,
    pub side: usize,
    pub regions: Vec<Region>,
    pub noise_seed: u64,
    pub background: [u8; 3],
}

pub fn write_ppm(path: &Path, w: usize, h: usize, rgb: &[u8]) {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(rgb);
    fs::write(path, bytes).unwrap();
}

pub fn write_pgm(path: &Path, w: usize, h: usize, gray: &[u8]) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(gray);
    fs::write(path, bytes).unwrap();
}

/// Writes `frames/frame_XX.ppm`, `masks/attr{m}_frame{i}.pgm` and
/// `manifest.txt` under `dir`; returns the manifest path.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> PathBuf {
    let s = spec.side;
    fs::create_dir_all(dir.join("frames")).unwrap();
    fs::create_dir_all(dir.join("masks")).unwrap();
    let noise = seeded_tensor(&[spec.frames * s * s * 3], spec.noise_seed).unwrap();
    for f in 0..spec.frames {
        let mut rgb = Vec::with_capacity(s * s * 3);
        for y in 0..s {
            for x in 0..s {
                let base = spec
                    .regions
                    .iter()
                    .find(|r| r.contains(f, y, x))
                    .map_or(spec.background, |r| r.color);
                for c in 0..3 {
                    let n = noise.data()[((f * s + y) * s + x) * 3 + c] * 12.0;
                    let shade = (x + y) as f32 * 0.5;
                    rgb.push((base[c] as f32 + n + shade).clamp(0.0, 255.0) as u8);
                }
            }
        }
        write_ppm(&dir.join(format!("frames/frame_{f:02}.ppm")), s, s, &rgb);
        for (m, r) in spec.regions.iter().enumerate() {
            let gray: Vec<u8> = (0..s * s)
                .map(|p| if r.contains(f, p / s, p % s) { 255 } else { 0 })
                .collect();
            write_pgm(
                &dir.join(format!("masks/attr{m}_frame{f}.pgm")),
                s,
                s,
                &gray,
            );
        }
    }
    let mut manifest = String::from("frames: frames\n");
    for (m, r) in spec.regions.iter().enumerate() {
        manifest.push_str(&format!(
            "attribute {m} \"{}\": masks/attr{m}_frame{{i}}.pgm\n",
            r.span
        ));
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).unwrap();
    path
}

pub fn car_fixture(frames: usize, side: usize) -> FixtureSpec {
    FixtureSpec {
        frames,
        side,
        regions: vec![Region {
            span: "blue car".into(),
            y: side / 4,
            x: side / 8,
            h: side / 2,
            w: side / 2,
            dx: 1,
            color: [200, 30, 30],
        }],
        noise_seed: 5,
        background: [40, 120, 50],
    }
}

pub fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("edit.toml");
    fs::write(&path, body).unwrap();
    path
}

pub fn binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_makima"))
}
