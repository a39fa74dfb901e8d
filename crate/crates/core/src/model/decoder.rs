//! All-MLP decoder: per-level projection, resize, concatenation, fusion
//! and a per-pixel classification head.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::encoder::MultiLevelFeatures;
use super::ops::{parameterized, resize_bilinear_nhwc, Init, Linear};
use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionResolution {
    /// Resize projected levels to the input resolution before fusing.
    InputResolution,
    /// Fuse at feature resolution, then upsample the logits.
    QuarterThenUpsample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub fusion: FusionResolution,
    /// ReLU after the fusion layer.
    pub fuse_activation: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            num_classes: NUM_CLASSES,
            fusion: FusionResolution::InputResolution,
            fuse_activation: false,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_classes < 2 {
            return Err(Error::InvalidConfig(
                "decoder needs hidden_dim > 0 and at least two classes".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MlpDecoder {
    pub config: DecoderConfig,
    pub proj: Vec<Linear>,
    pub fuse: Linear,
    pub head: Linear,
}

parameterized!(MlpDecoder { proj, fuse, head });

impl MlpDecoder {
    pub fn new(config: DecoderConfig, in_dim: usize, num_levels: usize, init: &mut Init) -> Result<Self> {
        config.validate()?;
        if num_levels == 0 {
            return Err(Error::EmptyFeatures);
        }
        let u = config.hidden_dim;
        let proj = (0..num_levels)
            .map(|_| Linear::init(init, in_dim, u, INIT_STD))
            .collect::<Result<Vec<_>>>()?;
        let fuse = Linear::init(init, num_levels * u, u, INIT_STD)?;
        let head = Linear::init(init, u, config.num_classes, INIT_STD)?;
        Ok(Self {
            config,
            proj,
            fuse,
            head,
        })
    }

    /// Logits of shape `(B, out_h, out_w, num_classes)`.
    pub fn forward(&self, features: &MultiLevelFeatures, out_h: usize, out_w: usize) -> Result<Tensor> {
        if features.levels.is_empty() {
            return Err(Error::EmptyFeatures);
        }
        if features.levels.len() != self.proj.len() {
            return Err(Error::ShapeMismatch(format!(
                "decoder built for {} levels, got {}",
                self.proj.len(),
                features.levels.len()
            )));
        }
        let (fh, fw) = match self.config.fusion {
            FusionResolution::InputResolution => (out_h, out_w),
            FusionResolution::QuarterThenUpsample => {
                let (_, h, w, _) = features.levels[0].dims4()?;
                (h, w)
            }
        };
        let projected = features
            .levels
            .iter()
            .zip(&self.proj)
            .map(|(level, proj)| resize_bilinear_nhwc(&proj.forward(level)?, fh, fw))
            .collect::<Result<Vec<_>>>()?;
        let mut fused = self.fuse.forward(&Tensor::cat(&projected, 3)?)?;
        drop(projected);
        if self.config.fuse_activation {
            fused = fused.relu()?;
        }
        let logits = self.head.forward(&fused)?;
        resize_bilinear_nhwc(&logits, out_h, out_w)
    }
}
