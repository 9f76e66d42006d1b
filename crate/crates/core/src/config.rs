//! Run configuration: one JSON document with an explicit schema version.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;
use crate::encoder::{EncoderConfig, Modality, PoolMode, TokenShape};
use crate::error::{Error, Result};
use crate::inference::{DEFAULT_ALPHA, DEFAULT_BEAM, DEFAULT_MAX_LEN};
use crate::model::ModelConfig;
use crate::nn::INIT_STD;
use crate::signal::FrontendConfig;
use crate::training::TrainConfig;
use crate::video::{FrameSelection, VideoConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    pub beam: usize,
    pub alpha: f64,
    pub max_len: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            beam: DEFAULT_BEAM,
            alpha: DEFAULT_ALPHA,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Training manifest (JSON lines).
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Directory receiving checkpoint, vocabulary and logs.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendSettings {
    #[serde(default)]
    pub audio: FrontendConfig,
    #[serde(default)]
    pub video: VideoConfig,
    /// Frame subset policy while training; captioning always uses `center`.
    #[serde(default = "default_train_frames")]
    pub train_frame_selection: FrameSelection,
}

fn default_train_frames() -> FrameSelection {
    FrameSelection::RandomStart
}

impl Default for FrontendSettings {
    fn default() -> Self {
        Self {
            audio: FrontendConfig::default(),
            video: VideoConfig::default(),
            train_frame_selection: default_train_frames(),
        }
    }
}

fn default_min_count() -> usize {
    1
}

fn default_init_std() -> f64 {
    INIT_STD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub modality: Modality,
    pub n_f: usize,
    #[serde(default)]
    pub frontend: FrontendSettings,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default = "default_min_count")]
    pub vocab_min_count: usize,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Small from-scratch configuration used by default.
    pub fn desk() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            modality: Modality::AudioVisual,
            n_f: 1,
            frontend: FrontendSettings::default(),
            encoder: EncoderConfig {
                dim: 32,
                modality_layers: 2,
                joint_layers: 1,
                heads: 4,
                pool_mode: PoolMode::None,
                modality_embeddings: false,
            },
            decoder: DecoderConfig {
                layers: 2,
                dim: 32,
                heads: 4,
                vocab_size: 0,
                max_positions: 32,
                tie_output_embedding: false,
            },
            train: TrainConfig::desk(),
            inference: InferenceConfig::default(),
            paths: Paths::default(),
            vocab_min_count: 1,
            init_std: INIT_STD,
        }
    }

    /// Full-size architecture; used for shape checks only.
    pub fn full() -> Self {
        Self {
            n_f: 8,
            encoder: EncoderConfig {
                dim: 768,
                modality_layers: 11,
                joint_layers: 1,
                heads: 12,
                pool_mode: PoolMode::None,
                modality_embeddings: false,
            },
            decoder: DecoderConfig {
                layers: 12,
                dim: 768,
                heads: 12,
                vocab_size: 0,
                max_positions: 64,
                tie_output_embedding: false,
            },
            train: TrainConfig::full(),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.frontend.audio.validate()?;
        self.frontend.video.validate(self.n_f)?;
        self.encoder.validate()?;
        let mut dec = self.decoder.clone();
        dec.vocab_size = dec.vocab_size.max(4);
        dec.validate()?;
        self.train.validate()?;
        if self.inference.beam == 0 || self.inference.max_len == 0 {
            return Err(Error::Config("inference beam and max_len must be positive".into()));
        }
        if self.vocab_min_count == 0 {
            return Err(Error::Config("vocab_min_count must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads a config file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.manifest, &mut cfg.paths.out_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::file(path, e))
    }

    pub fn audio_tokens(&self) -> TokenShape {
        TokenShape {
            count: self.frontend.audio.token_count(),
            dim: self.frontend.audio.patch_dim(),
        }
    }

    pub fn video_tokens(&self) -> TokenShape {
        TokenShape {
            count: self.frontend.video.token_count(self.n_f),
            dim: self.frontend.video.patch_dim(self.n_f),
        }
    }

    /// Model configuration for a vocabulary of `vocab_size` entries.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let mut decoder = self.decoder.clone();
        decoder.vocab_size = vocab_size;
        ModelConfig {
            modality: self.modality,
            encoder: self.encoder.clone(),
            decoder,
            audio: self.modality.uses_audio().then(|| self.audio_tokens()),
            video: self.modality.uses_video().then(|| self.video_tokens()),
            init_std: self.init_std,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [RunConfig::desk(), RunConfig::full()] {
            cfg.validate().unwrap();
            let json = cfg.to_json().unwrap();
            let back = RunConfig::from_json(&json).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_json().unwrap(), json);
        }
    }

    #[test]
    fn full_preset_layer_budget() {
        let p = RunConfig::full();
        assert_eq!(p.encoder.modality_layers + p.encoder.joint_layers, 12);
        assert_eq!(p.decoder.layers, 12);
        assert_eq!(p.audio_tokens().count, 512);
        assert_eq!(p.video_tokens().count, 784);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        let mut c = RunConfig::desk();
        c.schema_version = 9;
        assert!(c.validate().unwrap_err().is_config_error());
        let mut c = RunConfig::desk();
        c.n_f = 3;
        assert!(c.validate().unwrap_err().is_config_error());
        assert!(RunConfig::from_json("{\"schema_version\":1}").unwrap_err().is_config_error());
        let with_unknown = RunConfig::desk().to_json().unwrap().replacen('{', "{\"bogus\":1,", 1);
        assert!(RunConfig::from_json(&with_unknown).unwrap_err().is_config_error());
    }

    #[test]
    fn model_config_follows_modality() {
        let mut c = RunConfig::desk();
        c.modality = Modality::Audio;
        let m = c.model_config(12);
        assert!(m.video.is_none());
        assert_eq!(m.audio.unwrap().count, 512);
        assert_eq!(m.decoder.vocab_size, 12);
        m.validate().unwrap();
    }
}
