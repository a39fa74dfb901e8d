//! Low-rank adapters on the encoder's query and value projections.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::encoder::VitEncoder;
use super::ops::{parameterized, Init, Linear, Param, Parameterized};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    /// Adapter output is scaled by `alpha / rank`.
    pub alpha: f64,
    /// Standard deviation of the down-projection initialization.
    pub init_std: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            alpha: 4.0,
            init_std: 0.02,
        }
    }
}

impl LoraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("lora rank must be positive".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidConfig("lora alpha must be positive".into()));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// `delta(x) = scale * (x A^T) B^T` with `A: (rank, in)` and `B: (out, rank)`.
#[derive(Debug, Clone)]
pub struct LoraPair {
    pub lora_a: Param,
    pub lora_b: Param,
    pub scale: f64,
}

parameterized!(LoraPair { lora_a, lora_b });

impl LoraPair {
    pub fn init(init: &mut Init, in_dim: usize, out_dim: usize, cfg: &LoraConfig) -> Result<Self> {
        Ok(Self {
            lora_a: Param::trainable(init.normal(&[cfg.rank, in_dim], cfg.init_std)?)?,
            lora_b: Param::trainable(init.zeros(&[out_dim, cfg.rank])?)?,
            scale: cfg.scale(),
        })
    }

    fn delta(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let last = *dims.last().expect("non-scalar input");
        let flat = x.reshape((x.elem_count() / last, last))?;
        let low = flat.matmul(&self.lora_a.tensor().t()?)?;
        let up = low.matmul(&self.lora_b.tensor().t()?)?.affine(self.scale, 0.0)?;
        let mut out = dims;
        *out.last_mut().expect("non-scalar input") = self.lora_b.tensor().dims()[0];
        Ok(up.reshape(out)?)
    }
}

/// A linear layer that may carry an adapter.
#[derive(Debug, Clone)]
pub struct LoraLinear {
    pub base: Linear,
    pub adapter: Option<LoraPair>,
}

parameterized!(LoraLinear { base, adapter });

impl LoraLinear {
    pub fn plain(base: Linear) -> Self {
        Self {
            base,
            adapter: None,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.base.forward(x)?;
        match &self.adapter {
            Some(a) => Ok((y + a.delta(x)?)?),
            None => Ok(y),
        }
    }
}

/// Freezes every encoder weight and attaches trainable adapters to the
/// query and value projections of every block. Returns the number of
/// trainable adapter parameters.
pub fn inject_lora(encoder: &mut VitEncoder, cfg: &LoraConfig, seed: u64) -> Result<usize> {
    cfg.validate()?;
    if encoder.has_adapters() {
        return Err(Error::AlreadyAdapted);
    }
    encoder.visit_mut("", &mut |_, p| p.freeze());
    let mut init = Init::new(seed, encoder.dtype(), encoder.device());
    let mut count = 0;
    for block in encoder.blocks.iter_mut() {
        for proj in [&mut block.attn.query, &mut block.attn.value] {
            let pair = LoraPair::init(&mut init, proj.base.in_dim(), proj.base.out_dim(), cfg)?;
            count += pair.lora_a.elem_count() + pair.lora_b.elem_count();
            proj.adapter = Some(pair);
        }
    }
    Ok(count)
}
