use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention_engine::{tokenize, InjectionPolicy};
use crate::error::{Error, Result};
use crate::latent_codec::TRAIN_STEPS;
use crate::modulation::{ModulationConfig, DEFAULT_GAMMA_CROSS, DEFAULT_GAMMA_SELF};
use crate::propagation::SigmaMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// At most 64 pixels per side, 8-pixel patches.
    #[default]
    Desk,
    /// At most 512 pixels per side, 16-pixel patches.
    Paper,
}

impl Profile {
    pub fn max_side(self) -> usize {
        match self {
            Profile::Desk => 64,
            Profile::Paper => 512,
        }
    }

    pub fn patch(self) -> usize {
        match self {
            Profile::Desk => 8,
            Profile::Paper => 16,
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Modulation,
    Injection,
    Propagation,
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modulation" => Ok(Component::Modulation),
            "injection" => Ok(Component::Injection),
            "propagation" => Ok(Component::Propagation),
            other => Err(Error::Config(format!("unknown component {other:?}"))),
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Modulation => "modulation",
            Component::Injection => "injection",
            Component::Propagation => "propagation",
        })
    }
}

/// One attribute edit `τ → τ′`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeEdit {
    pub source: String,
    pub target: String,
}

fn default_steps() -> usize {
    50
}
fn default_guidance() -> f32 {
    7.5
}
fn default_gamma_self() -> f32 {
    DEFAULT_GAMMA_SELF
}
fn default_gamma_cross() -> f32 {
    DEFAULT_GAMMA_CROSS
}
fn default_qk_steps() -> usize {
    25
}
fn default_feature_steps() -> usize {
    40
}
fn default_keyframes() -> usize {
    3
}
fn default_max_frames() -> usize {
    12
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditConfig {
    pub manifest: PathBuf,
    /// Overrides the manifest's frame directory.
    #[serde(default)]
    pub frames: Option<PathBuf>,
    pub source_prompt: String,
    /// Defaults to the source prompt with every edit applied.
    #[serde(default)]
    pub target_prompt: Option<String>,
    #[serde(default)]
    pub edits: Vec<AttributeEdit>,
    #[serde(default = "default_steps")]
    pub sample_steps: usize,
    #[serde(default = "default_guidance")]
    pub guidance: f32,
    #[serde(default = "default_gamma_self")]
    pub gamma_self: f32,
    #[serde(default = "default_gamma_cross")]
    pub gamma_cross: f32,
    #[serde(default = "default_qk_steps")]
    pub qk_injection_steps: usize,
    #[serde(default = "default_feature_steps")]
    pub feature_injection_steps: usize,
    #[serde(default = "default_keyframes")]
    pub keyframes_per_step: usize,
    #[serde(default = "default_max_frames")]
    pub max_frames: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sigma: SigmaMode,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub disable: BTreeSet<Component>,
    #[serde(default)]
    pub dump_attention: bool,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl EditConfig {
    /// Config with every default and the given prompt and manifest.
    pub fn new(manifest: impl Into<PathBuf>, source_prompt: impl Into<String>) -> Self {
        Self {
            manifest: manifest.into(),
            frames: None,
            source_prompt: source_prompt.into(),
            target_prompt: None,
            edits: Vec::new(),
            sample_steps: default_steps(),
            guidance: default_guidance(),
            gamma_self: default_gamma_self(),
            gamma_cross: default_gamma_cross(),
            qk_injection_steps: default_qk_steps(),
            feature_injection_steps: default_feature_steps(),
            keyframes_per_step: default_keyframes(),
            max_frames: default_max_frames(),
            seed: 0,
            sigma: SigmaMode::default(),
            profile: Profile::default(),
            disable: BTreeSet::new(),
            dump_attention: false,
            output_dir: default_output(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.manifest = base.join(&cfg.manifest);
        cfg.frames = cfg.frames.map(|f| base.join(f));
        cfg.output_dir = base.join(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_steps == 0 || self.sample_steps > TRAIN_STEPS {
            return Err(Error::Config(format!(
                "sample_steps must be in 1..={TRAIN_STEPS}, got {}",
                self.sample_steps
            )));
        }
        if !self.guidance.is_finite() {
            return Err(Error::Config("guidance must be finite".into()));
        }
        if self.keyframes_per_step == 0 {
            return Err(Error::Config(
                "keyframes_per_step must be at least 1".into(),
            ));
        }
        if self.max_frames == 0 {
            return Err(Error::Config("max_frames must be at least 1".into()));
        }
        if tokenize(&self.source_prompt).is_empty() {
            return Err(Error::Config("source prompt is empty".into()));
        }
        if let Some(t) = &self.target_prompt {
            if tokenize(t).is_empty() {
                return Err(Error::Config("target prompt is empty".into()));
            }
        }
        for e in &self.edits {
            if tokenize(&e.source).is_empty() || tokenize(&e.target).is_empty() {
                return Err(Error::Config("attribute edits need nonempty spans".into()));
            }
        }
        self.modulation().validate()
    }

    pub fn enabled(&self, c: Component) -> bool {
        !self.disable.contains(&c)
    }

    pub fn modulation(&self) -> ModulationConfig {
        ModulationConfig {
            gamma_self: self.gamma_self,
            gamma_cross: self.gamma_cross,
            enabled: self.enabled(Component::Modulation),
            ..ModulationConfig::default()
        }
    }

    pub fn injection(&self) -> InjectionPolicy {
        InjectionPolicy {
            qk_steps: self.qk_injection_steps,
            feature_steps: self.feature_injection_steps,
            enabled: self.enabled(Component::Injection),
            ..InjectionPolicy::default()
        }
    }

    /// `P′` as tokens: the explicit target prompt, or `P` with each edit's
    /// source span replaced by its target span.
    pub fn target_tokens(&self) -> Result<Vec<String>> {
        if let Some(t) = &self.target_prompt {
            return Ok(tokenize(t));
        }
        let mut tokens = tokenize(&self.source_prompt);
        for e in &self.edits {
            let (from, to) = (tokenize(&e.source), tokenize(&e.target));
            let at = (0..=tokens.len().saturating_sub(from.len()))
                .find(|&s| tokens.get(s..s + from.len()) == Some(&from[..]))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "edit source {:?} not in the source prompt",
                        e.source
                    ))
                })?;
            tokens.splice(at..at + from.len(), to);
        }
        Ok(tokens)
    }
}
