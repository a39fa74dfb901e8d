//! Plain ViT encoder with multi-level feature extraction.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::lora::LoraLinear;
use super::ops::{parameterized, resize_bilinear_nhwc, softmax_last, Init, LayerNorm, Linear, Param};
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Square input side in pixels.
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    /// 1-based indices of the blocks whose outputs feed the decoder.
    pub levels: Vec<usize>,
    /// Spatial upsampling factor applied to each feature level.
    pub upsample: usize,
    pub pixel_mean: [f32; 3],
    pub pixel_std: [f32; 3],
}

impl EncoderConfig {
    /// ViT-Base/14 at 532 px with features from blocks 3, 6, 9 and 12.
    pub fn vit_base(image_size: usize) -> Self {
        Self {
            image_size,
            patch_size: 14,
            embed_dim: 768,
            depth: 12,
            num_heads: 12,
            mlp_ratio: 4,
            levels: vec![3, 6, 9, 12],
            upsample: 4,
            pixel_mean: [0.485, 0.456, 0.406],
            pixel_std: [0.229, 0.224, 0.225],
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Side of each extracted feature map.
    pub fn feature_side(&self) -> usize {
        self.grid() * self.upsample
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 || self.image_size == 0 {
            return Err(Error::IndivisibleSize {
                side: self.image_size,
                patch: self.patch_size,
            });
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if self.levels.is_empty() {
            return Err(Error::EmptyFeatures);
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1])
            || self.levels[0] == 0
            || *self.levels.last().expect("non-empty") > self.depth
        {
            return Err(Error::InvalidConfig(format!(
                "levels {:?} must be increasing within 1..={}",
                self.levels, self.depth
            )));
        }
        if self.upsample == 0 || self.mlp_ratio == 0 {
            return Err(Error::InvalidConfig("upsample and mlp_ratio must be positive".into()));
        }
        if self.pixel_std.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidConfig("pixel_std must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub query: LoraLinear,
    pub key: Linear,
    pub value: LoraLinear,
    pub proj: Linear,
    num_heads: usize,
}

parameterized!(Attention { query, key, value, proj });

impl Attention {
    fn init(init: &mut Init, dim: usize, num_heads: usize) -> Result<Self> {
        Ok(Self {
            query: LoraLinear::plain(Linear::init(init, dim, dim, INIT_STD)?),
            key: Linear::init(init, dim, dim, INIT_STD)?,
            value: LoraLinear::plain(Linear::init(init, dim, dim, INIT_STD)?),
            proj: Linear::init(init, dim, dim, INIT_STD)?,
            num_heads,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let hd = d / self.num_heads;
        let heads = |y: Tensor| -> Result<Tensor> {
            Ok(y.reshape((b, t, self.num_heads, hd))?.transpose(1, 2)?.contiguous()?)
        };
        let q = heads(self.query.forward(x)?.affine(1.0 / (hd as f64).sqrt(), 0.0)?)?;
        let k = heads(self.key.forward(x)?)?;
        let v = heads(self.value.forward(x)?)?;
        let scores = q.matmul(&k.t()?.contiguous()?)?;
        let attn = softmax_last(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, t, d))?;
        self.proj.forward(&out)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

parameterized!(Mlp { fc1, fc2 });

#[derive(Debug, Clone)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

parameterized!(Block { norm1, attn, norm2, mlp });

impl Block {
    fn init(init: &mut Init, cfg: &EncoderConfig) -> Result<Self> {
        let d = cfg.embed_dim;
        Ok(Self {
            norm1: LayerNorm::init(init, d)?,
            attn: Attention::init(init, d, cfg.num_heads)?,
            norm2: LayerNorm::init(init, d)?,
            mlp: Mlp {
                fc1: Linear::init(init, d, d * cfg.mlp_ratio, INIT_STD)?,
                fc2: Linear::init(init, d * cfg.mlp_ratio, d, INIT_STD)?,
            },
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.norm1.forward(x)?)?)?;
        let h = self.mlp.fc1.forward(&self.norm2.forward(&x)?)?.gelu_erf()?;
        Ok((&x + self.mlp.fc2.forward(&h)?)?)
    }
}

/// Per-level maps of shape `(B, grid * upsample, grid * upsample, 2 * embed_dim)`:
/// patch tokens concatenated with the broadcast class token.
#[derive(Debug, Clone)]
pub struct MultiLevelFeatures {
    pub levels: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct VitEncoder {
    pub config: EncoderConfig,
    pub patch_embed: Linear,
    pub cls_token: Param,
    pub pos_embed: Param,
    pub blocks: Vec<Block>,
    pixel_mean: Tensor,
    pixel_std: Tensor,
}

parameterized!(VitEncoder { patch_embed, cls_token, pos_embed, blocks });

impl VitEncoder {
    pub fn new(config: EncoderConfig, init: &mut Init) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let p = config.patch_size;
        let n = config.grid() * config.grid();
        let patch_embed = Linear::init(init, p * p * 3, d, INIT_STD)?;
        let cls_token = Param::trainable(init.normal(&[1, 1, d], INIT_STD)?)?;
        let pos_embed = Param::trainable(init.normal(&[1, n + 1, d], INIT_STD)?)?;
        let blocks = (0..config.depth)
            .map(|_| Block::init(init, &config))
            .collect::<Result<Vec<_>>>()?;
        let pixel_mean = Tensor::new(&config.pixel_mean, init.device())?
            .to_dtype(init.dtype())?
            .reshape((1, 1, 1, 3))?;
        let pixel_std = Tensor::new(&config.pixel_std, init.device())?
            .to_dtype(init.dtype())?
            .reshape((1, 1, 1, 3))?;
        Ok(Self {
            config,
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
            pixel_mean,
            pixel_std,
        })
    }

    pub fn dtype(&self) -> DType {
        self.cls_token.tensor().dtype()
    }

    pub fn device(&self) -> &Device {
        self.cls_token.tensor().device()
    }

    pub fn has_adapters(&self) -> bool {
        self.blocks
            .iter()
            .any(|b| b.attn.query.adapter.is_some() || b.attn.value.adapter.is_some())
    }

    /// Standardized patch tokens plus class token and positions, `(B, 1 + N, D)`.
    pub fn embed(&self, images: &Tensor) -> Result<Tensor> {
        let (b, h, w, c) = images.dims4()?;
        let side = self.config.image_size;
        if (h, w, c) != (side, side, 3) {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects {side}x{side}x3 input, got {h}x{w}x{c}"
            )));
        }
        let p = self.config.patch_size;
        let g = self.config.grid();
        let x = images
            .broadcast_sub(&self.pixel_mean)?
            .broadcast_div(&self.pixel_std)?
            .reshape((b, g, p, g, p, 3))?
            .permute((0, 1, 3, 2, 4, 5))?
            .contiguous()?
            .reshape((b, g * g, p * p * 3))?;
        let tokens = self.patch_embed.forward(&x)?;
        let d = self.config.embed_dim;
        let cls = self.cls_token.tensor().broadcast_as((b, 1, d))?;
        Ok(Tensor::cat(&[&cls, &tokens], 1)?.broadcast_add(self.pos_embed.tensor())?)
    }

    /// Token sequences after each selected block. Blocks past the last
    /// selected level are skipped.
    pub fn selected_tokens(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let mut x = self.embed(images)?;
        let last = *self.config.levels.last().ok_or(Error::EmptyFeatures)?;
        let mut out = Vec::with_capacity(self.config.levels.len());
        for (i, block) in self.blocks.iter().take(last).enumerate() {
            x = block.forward(&x)?;
            if self.config.levels.contains(&(i + 1)) {
                out.push(x.clone());
            }
        }
        Ok(out)
    }

    pub fn extract_multilevel(&self, images: &Tensor) -> Result<MultiLevelFeatures> {
        let g = self.config.grid();
        let side = self.config.feature_side();
        let levels = self
            .selected_tokens(images)?
            .into_iter()
            .map(|tokens| {
                let (b, t, d) = tokens.dims3()?;
                let patches = tokens.narrow(1, 1, t - 1)?.reshape((b, g, g, d))?;
                let cls = tokens.narrow(1, 0, 1)?.reshape((b, 1, 1, d))?.broadcast_as((b, g, g, d))?;
                let joined = Tensor::cat(&[&patches, &cls.contiguous()?], 3)?;
                resize_bilinear_nhwc(&joined, side, side)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiLevelFeatures { levels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> EncoderConfig {
        EncoderConfig {
            image_size: 8,
            patch_size: 4,
            embed_dim: 8,
            depth: 3,
            num_heads: 2,
            mlp_ratio: 2,
            levels: vec![1, 3],
            upsample: 2,
            pixel_mean: [0.5; 3],
            pixel_std: [0.25; 3],
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = tiny();
        c.image_size = 10;
        assert!(matches!(c.validate(), Err(Error::IndivisibleSize { side: 10, patch: 4 })));
        let mut c = tiny();
        c.levels.clear();
        assert!(matches!(c.validate(), Err(Error::EmptyFeatures)));
        let mut c = tiny();
        c.levels = vec![2, 2];
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.levels = vec![4];
        assert!(c.validate().is_err());
    }

    #[test]
    fn multilevel_shapes() {
        let mut init = Init::new(1, DType::F32, &Device::Cpu);
        let enc = VitEncoder::new(tiny(), &mut init).unwrap();
        let x = Tensor::zeros((2, 8, 8, 3), DType::F32, &Device::Cpu).unwrap();
        let f = enc.extract_multilevel(&x).unwrap();
        assert_eq!(f.levels.len(), 2);
        for l in &f.levels {
            assert_eq!(l.dims(), &[2, 4, 4, 16]);
        }
        let wrong = Tensor::zeros((1, 12, 12, 3), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(enc.extract_multilevel(&wrong), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn class_token_half_is_spatially_constant() {
        let mut init = Init::new(2, DType::F64, &Device::Cpu);
        let enc = VitEncoder::new(tiny(), &mut init).unwrap();
        let x = init.normal(&[1, 8, 8, 3], 1.0).unwrap();
        let f = &enc.extract_multilevel(&x).unwrap().levels[0];
        let cls = f.narrow(3, 8, 8).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for px in cls.chunks(8) {
            for (a, b) in px.iter().zip(&cls[..8]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
