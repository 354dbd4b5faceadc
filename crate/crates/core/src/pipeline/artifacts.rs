use std::io::Write;
use std::path::{Path, PathBuf};

use crate::attention_engine::AttentionDump;
use crate::error::{Error, Result};

use super::run::EditOutcome;

pub const ATTENTION_MAGIC: &[u8; 4] = b"MKAT";
pub const LATENTS_FILE: &str = "latents.mklt";
pub const REPORT_FILE: &str = "report.txt";
pub const KEYFRAMES_FILE: &str = "keyframes.txt";
pub const ATTENTION_DIR: &str = "attn";

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// `MKAT`, a u32 record count, then per record u32 `frame`, `layer`,
/// `rows`, `cols` and the row-major f32 scores, all little-endian.
pub fn encode_attention(dumps: &[AttentionDump]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(ATTENTION_MAGIC);
    out.extend_from_slice(&(dumps.len() as u32).to_le_bytes());
    for d in dumps {
        for v in [d.frame, d.layer, d.scores.rows(), d.scores.cols()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in d.scores.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Writes latents, report, keyframe plan and any attention dumps under
/// `dir`; returns the paths written.
pub fn emit_artifacts(outcome: &EditOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, bytes: &[u8]| -> Result<()> {
        write_atomic(&path, bytes)?;
        written.push(path);
        Ok(())
    };
    put(dir.join(LATENTS_FILE), &outcome.edited.to_bytes())?;
    put(dir.join(REPORT_FILE), outcome.report.to_text().as_bytes())?;
    put(dir.join(KEYFRAMES_FILE), outcome.plan.dump().as_bytes())?;
    if !outcome.attention.is_empty() {
        let attn = dir.join(ATTENTION_DIR);
        std::fs::create_dir_all(&attn).map_err(|e| Error::io(&attn, e))?;
        for (step, dumps) in &outcome.attention {
            put(
                attn.join(format!("step{step}.mkat")),
                &encode_attention(dumps),
            )?;
        }
    }
    Ok(written)
}
