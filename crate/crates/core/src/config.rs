//! Declarative experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderDims;
use crate::error::{Error, Result};
use crate::montage::PreprocessConfig;
use crate::synthgen::SynthConfig;
use crate::textprep::{compile_filters, TextConfig, TruncationSide};
use crate::trainer::TrainerConfig;
use crate::zeroshot::{TemplateMode, TemplatesConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub patch: usize,
    pub hidden: usize,
    pub embed: usize,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            patch: 16,
            hidden: 256,
            embed: 64,
            init_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn dims(&self, vocab: usize) -> EncoderDims {
        EncoderDims {
            patch: self.patch,
            hidden: self.hidden,
            embed: self.embed,
            vocab,
        }
    }
}

/// Optional path overrides; unset entries fall back to the run layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub run_dir: PathBuf,
    /// Input manifest; defaults to `<run_dir>/data/manifest.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Image embeddings read by `eval-zeroshot`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_embeddings: Option<PathBuf>,
    /// Prompt embeddings read by `eval-zeroshot` (ids are the prompt texts).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_embeddings: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            run_dir: PathBuf::from("runs/default"),
            manifest: None,
            image_embeddings: None,
            prompt_embeddings: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub context_lengths: Vec<usize>,
    pub truncation_sides: Vec<TruncationSide>,
    pub modes: Vec<TemplateMode>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            context_lengths: vec![100, 200],
            truncation_sides: vec![TruncationSide::Left, TruncationSide::Right],
            modes: vec![TemplateMode::ClassIndependent, TemplateMode::ClassDependent],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preprocess: PreprocessConfig,
    pub text: TextConfig,
    pub encoder: EncoderConfig,
    pub trainer: TrainerConfig,
    pub templates: TemplatesConfig,
    pub synth: SynthConfig,
    pub ablation: AblationConfig,
    pub paths: PathsConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Sets every stage seed (corpus, montage sampling, split and shuffling,
    /// initialization) to `seed`.
    pub fn apply_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.preprocess.master_seed = seed;
        self.trainer.seed = seed;
        self.encoder.init_seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.text.validate()?;
        compile_filters(&self.text.filter_rules)?;
        self.trainer.validate()?;
        for mode in [TemplateMode::ClassDependent, TemplateMode::ClassIndependent] {
            self.templates.registry(mode)?;
        }
        self.synth.validate(self.templates.classes.len())?;
        let e = &self.encoder;
        if e.patch == 0 || e.hidden == 0 || e.embed == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        let tile = self.preprocess.output_side;
        if tile % e.patch != 0 {
            return Err(Error::Config(format!(
                "output_side {tile} is not a multiple of patch {}",
                e.patch
            )));
        }
        let a = &self.ablation;
        if a.context_lengths.is_empty() || a.truncation_sides.is_empty() || a.modes.is_empty() {
            return Err(Error::Config("ablation axes must be non-empty".into()));
        }
        if let Some(&c) = a.context_lengths.iter().find(|&&c| c < 2) {
            return Err(Error::Config(format!("ablation context length {c} < 2")));
        }
        Ok(())
    }
}
