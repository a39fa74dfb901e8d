//! Experiment configuration: every knob of one run, with a stable hash.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{DecoderConfig, EncoderConfig, LoraConfig, ModelConfig};
use crate::prompt::PromptKind;
use crate::train::{MixSpec, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    /// Checkpoint whose `encoder.*` tensors initialize the backbone.
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub encoder: EncoderConfig,
    pub lora: Option<LoraConfig>,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub mix: MixSpec,
    #[serde(default)]
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// ViT-Base at 532 px, rank-4 adapters, 100 epochs of batch 8 at 1e-3.
    Full,
    /// A small from-scratch model at 64 px for CPU runs.
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?} (full|desk)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Full => "full",
            Preset::Desk => "desk",
        })
    }
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Full => Self::full(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn full() -> Self {
        let model = ModelConfig::vit_base();
        Self {
            encoder: model.encoder,
            lora: model.lora,
            decoder: model.decoder,
            train: TrainConfig::default(),
            mix: MixSpec::single(PromptKind::LongScribble),
            paths: PathsConfig::default(),
        }
    }

    pub fn desk() -> Self {
        Self {
            encoder: EncoderConfig {
                image_size: 64,
                patch_size: 4,
                embed_dim: 64,
                depth: 4,
                num_heads: 4,
                mlp_ratio: 2,
                levels: vec![2, 4],
                upsample: 1,
                pixel_mean: [0.485, 0.456, 0.406],
                pixel_std: [0.229, 0.224, 0.225],
            },
            lora: None,
            decoder: DecoderConfig {
                hidden_dim: 64,
                fuse_activation: true,
                ..DecoderConfig::default()
            },
            train: TrainConfig {
                epochs: 10,
                batch_size: 8,
                learning_rate: 0.004,
                ..TrainConfig::default()
            },
            mix: MixSpec::single(PromptKind::LongScribble),
            paths: PathsConfig::default(),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            lora: self.lora.clone(),
            decoder: self.decoder.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train.validate()?;
        self.mix.validate()
    }

    /// Compact JSON with object keys sorted.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_value(self)?.to_string())
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(crate::model::hex(&Sha256::digest(self.canonical_json()?.as_bytes())))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_round_trip() {
        for p in [Preset::Full, Preset::Desk] {
            let c = ExperimentConfig::preset(p);
            c.validate().unwrap();
            let back = ExperimentConfig::from_json(&c.canonical_json().unwrap()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        }
    }

    #[test]
    fn full_preset_matches_recipe() {
        let c = ExperimentConfig::full();
        assert_eq!(c.encoder.image_size, 532);
        assert_eq!(c.encoder.embed_dim, 768);
        assert_eq!(c.encoder.levels, vec![3, 6, 9, 12]);
        assert_eq!(c.lora.as_ref().unwrap().rank, 4);
        assert_eq!(c.train.learning_rate, 0.001);
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.train.epochs, 100);
    }

    #[test]
    fn hash_changes_with_any_field() {
        let a = ExperimentConfig::desk();
        let mut b = a.clone();
        b.train.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v = serde_json::to_value(ExperimentConfig::desk()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }
}
