//! Segmentation model: ViT encoder (optionally LoRA-adapted) plus All-MLP
//! decoder.

pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod lora;
pub mod ops;

use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{
    load_adapters, load_checkpoint, load_matching, read_checkpoint_config, save_adapters, save_checkpoint,
};
pub use decoder::{DecoderConfig, FusionResolution, MlpDecoder};
pub use encoder::{EncoderConfig, MultiLevelFeatures, VitEncoder};
pub use lora::{inject_lora, LoraConfig, LoraLinear, LoraPair};
pub use ops::{Init, Param, Parameterized};

use crate::data::{ClassMask, ImageTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// `None` trains the whole encoder instead of adapters.
    pub lora: Option<LoraConfig>,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    /// ViT-Base/14 at 532 px, rank-4 adapters, 256-wide decoder.
    pub fn vit_base() -> Self {
        Self {
            encoder: EncoderConfig::vit_base(532),
            lora: Some(LoraConfig::default()),
            decoder: DecoderConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if let Some(l) = &self.lora {
            l.validate()?;
        }
        self.decoder.validate()
    }

    pub fn image_size(&self) -> usize {
        self.encoder.image_size
    }
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    pub config: ModelConfig,
    pub encoder: VitEncoder,
    pub decoder: MlpDecoder,
}

ops::parameterized!(Segmenter { encoder, decoder });

impl Segmenter {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(config, seed, DType::F32, &Device::Cpu)
    }

    pub fn with_dtype(config: ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut encoder = VitEncoder::new(config.encoder.clone(), &mut Init::new(seed, dtype, device))?;
        let decoder = MlpDecoder::new(
            config.decoder.clone(),
            2 * config.encoder.embed_dim,
            config.encoder.levels.len(),
            &mut Init::new(seed.wrapping_add(1), dtype, device),
        )?;
        if let Some(l) = &config.lora {
            inject_lora(&mut encoder, l, seed.wrapping_add(2))?;
        }
        Ok(Self {
            config,
            encoder,
            decoder,
        })
    }

    pub fn dtype(&self) -> DType {
        self.encoder.dtype()
    }

    pub fn device(&self) -> &Device {
        self.encoder.device()
    }

    /// Logits `(B, S, S, num_classes)` for images `(B, S, S, 3)` in `[0, 1]`.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let features = self.encoder.extract_multilevel(images)?;
        let (_, h, w, _) = images.dims4()?;
        self.decoder.forward(&features, h, w)
    }

    /// Copy whose parameters are all detached; forwards build no graph.
    pub fn detached(&self) -> Self {
        let mut out = self.clone();
        out.visit_mut("", &mut |_, p| *p = p.detached());
        out
    }

    pub fn images_to_tensor(&self, images: &[ImageTensor]) -> Result<Tensor> {
        let s = self.config.image_size();
        let mut data = Vec::with_capacity(images.len() * s * s * 3);
        for img in images {
            if (img.height(), img.width()) != (s, s) {
                return Err(Error::ShapeMismatch(format!(
                    "model expects {s}x{s} images, got {}x{}",
                    img.width(),
                    img.height()
                )));
            }
            data.extend_from_slice(img.data());
        }
        Ok(Tensor::from_vec(data, (images.len(), s, s, 3), self.device())?.to_dtype(self.dtype())?)
    }

    /// Per-pixel argmax; ties go to the lower class index.
    pub fn predict(&self, images: &[ImageTensor]) -> Result<Vec<ClassMask>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let view = self.detached();
        let logits = view.forward(&view.images_to_tensor(images)?)?;
        logits_to_masks(&logits)
    }

    pub fn named_params(&self) -> Vec<(String, Param)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name.to_string(), p.clone())));
        out
    }

    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        self.named_params()
            .into_iter()
            .filter_map(|(n, p)| match p {
                Param::Trainable(v) => Some((n, v)),
                Param::Frozen(_) => None,
            })
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable_vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.elem_count()).sum()
    }

    /// SHA-256 over the names and raw values of every frozen parameter.
    pub fn frozen_digest(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, p) in self.named_params() {
            if let Param::Frozen(t) = p {
                hasher.update(name.as_bytes());
                for v in t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        Ok(hex(&hasher.finalize()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn logits_to_masks(logits: &Tensor) -> Result<Vec<ClassMask>> {
    let (b, h, w, c) = logits.dims4()?;
    let values = logits.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    (0..b)
        .map(|i| {
            let labels = values[i * h * w * c..(i + 1) * h * w * c]
                .chunks_exact(c)
                .map(|px| {
                    let mut best = 0;
                    for (k, &v) in px.iter().enumerate() {
                        if v > px[best] {
                            best = k;
                        }
                    }
                    best as u8
                })
                .collect();
            ClassMask::new(h, w, labels)
        })
        .collect()
}
