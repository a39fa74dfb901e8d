//! Parameters, deterministic initialization and the handful of
//! differentiable building blocks the encoder and decoder share.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, CustomOp2, DType, Device, Layout, Shape, Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::bilinear_taps;
use crate::error::Result;

/// A model weight. Trainable weights are candle variables and receive
/// gradients; frozen weights are plain tensors and never enter the
/// backward graph.
#[derive(Debug, Clone)]
pub enum Param {
    Trainable(Var),
    Frozen(Tensor),
}

impl Param {
    pub fn trainable(t: Tensor) -> Result<Self> {
        Ok(Param::Trainable(Var::from_tensor(&t)?))
    }

    pub fn tensor(&self) -> &Tensor {
        match self {
            Param::Trainable(v) => v.as_tensor(),
            Param::Frozen(t) => t,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Param::Trainable(_))
    }

    pub fn freeze(&mut self) {
        if let Param::Trainable(v) = self {
            *self = Param::Frozen(v.as_detached_tensor());
        }
    }

    /// Frozen alias sharing storage; forwards through it build no graph.
    pub fn detached(&self) -> Param {
        Param::Frozen(self.tensor().detach())
    }

    /// Replaces the value, keeping trainability.
    pub fn replace(&mut self, value: Tensor) -> Result<()> {
        *self = match self {
            Param::Trainable(_) => Param::trainable(value)?,
            Param::Frozen(_) => Param::Frozen(value),
        };
        Ok(())
    }

    pub fn elem_count(&self) -> usize {
        self.tensor().elem_count()
    }
}

/// Walks named parameters in a fixed order.
pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Parameterized for Param {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(prefix, self);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(prefix, self);
    }
}

impl<T: Parameterized> Parameterized for Option<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        if let Some(inner) = self {
            inner.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(inner) = self {
            inner.visit_mut(prefix, f);
        }
    }
}

impl<T: Parameterized> Parameterized for Vec<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, item) in self.iter().enumerate() {
            item.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, item) in self.iter_mut().enumerate() {
            item.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

macro_rules! parameterized {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::model::ops::Parameterized for $ty {
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &$crate::model::ops::Param)) {
                $( self.$field.visit(&$crate::model::ops::join(prefix, stringify!($field)), f); )*
            }

            fn visit_mut(
                &mut self,
                prefix: &str,
                f: &mut dyn FnMut(&str, &mut $crate::model::ops::Param),
            ) {
                $( self.$field.visit_mut(&$crate::model::ops::join(prefix, stringify!($field)), f); )*
            }
        }
    };
}
pub(crate) use parameterized;

/// Seeded source of initial weights.
pub struct Init {
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl Init {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0f64, std).expect("positive std");
        let values: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Ok(Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    pub fn zeros(&self, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::zeros(shape, self.dtype, &self.device)?)
    }

    pub fn ones(&self, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::ones(shape, self.dtype, &self.device)?)
    }
}

/// Affine map `y = x W^T + b` over the last dimension; `weight` is
/// `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

parameterized!(Linear { weight, bias });

impl Linear {
    pub fn init(init: &mut Init, in_dim: usize, out_dim: usize, std: f64) -> Result<Self> {
        Ok(Self {
            weight: Param::trainable(init.normal(&[out_dim, in_dim], std)?)?,
            bias: Some(Param::trainable(init.zeros(&[out_dim])?)?),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.tensor().dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.tensor().dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let last = *dims.last().expect("non-scalar input");
        let rows = x.elem_count() / last;
        let flat = x.reshape((rows, last))?;
        let mut y = flat.matmul(&self.weight.tensor().t()?)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b.tensor())?;
        }
        let mut out_dims = dims;
        *out_dims.last_mut().expect("non-scalar input") = self.out_dim();
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

parameterized!(LayerNorm { gamma, beta });

impl LayerNorm {
    pub fn init(init: &mut Init, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: Param::trainable(init.ones(&[dim])?)?,
            beta: Param::trainable(init.zeros(&[dim])?)?,
            eps: 1e-6,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(self.gamma.tensor())?
            .broadcast_add(self.beta.tensor())?)
    }
}

struct SoftmaxLast;
struct SoftmaxLastGrad;

fn contiguous_slice<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => Err(candle_core::Error::RequiresContiguous { op: "softmax" }),
    }
}

macro_rules! softmax_rows {
    ($x:expr, $n:expr) => {{
        let mut out = $x.to_vec();
        for row in out.chunks_exact_mut($n) {
            let max = row.iter().copied().fold(row[0], |a, b| if b > a { b } else { a });
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        out
    }};
}

macro_rules! softmax_grad_rows {
    ($t:ty, $s:expr, $g:expr, $n:expr) => {{
        let mut out = Vec::with_capacity($s.len());
        for (s, g) in $s.chunks_exact($n).zip($g.chunks_exact($n)) {
            let dot: f64 = s.iter().zip(g).map(|(a, b)| f64::from(*a * *b)).sum();
            out.extend(s.iter().zip(g).map(|(a, b)| *a * (*b - dot as $t)));
        }
        out
    }};
}

impl CustomOp1 for SoftmaxLast {
    fn name(&self) -> &'static str {
        "softmax-last"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let n = *layout.dims().last().expect("non-scalar input");
        let out = match storage {
            CpuStorage::F32(d) => CpuStorage::F32(softmax_rows!(contiguous_slice(d, layout)?, n)),
            CpuStorage::F64(d) => CpuStorage::F64(softmax_rows!(contiguous_slice(d, layout)?, n)),
            other => return Err(candle_core::Error::UnsupportedDTypeForOp(other.dtype(), "softmax")),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(res.apply_op2_no_bwd(&grad_res.contiguous()?, &SoftmaxLastGrad)?))
    }
}

impl CustomOp2 for SoftmaxLastGrad {
    fn name(&self) -> &'static str {
        "softmax-last-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let n = *l1.dims().last().expect("non-scalar input");
        let out = match (s1, s2) {
            (CpuStorage::F32(s), CpuStorage::F32(g)) => {
                CpuStorage::F32(softmax_grad_rows!(f32, contiguous_slice(s, l1)?, contiguous_slice(g, l2)?, n))
            }
            (CpuStorage::F64(s), CpuStorage::F64(g)) => {
                CpuStorage::F64(softmax_grad_rows!(f64, contiguous_slice(s, l1)?, contiguous_slice(g, l2)?, n))
            }
            _ => return Err(candle_core::Error::UnsupportedDTypeForOp(s1.dtype(), "softmax-grad")),
        };
        Ok((out, l1.shape().clone()))
    }
}

/// Softmax over the last dimension, fused into one pass per row on CPU.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    if x.device().is_cpu() {
        return Ok(x.contiguous()?.apply_op1(SoftmaxLast)?);
    }
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let sum = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&sum)?)
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

fn resize_axis(x: &Tensor, axis: usize, out_len: usize) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let in_len = dims[axis];
    if in_len == out_len {
        return Ok(x.clone());
    }
    let mut weights = vec![0f32; out_len * in_len];
    for (o, (lo, hi, t)) in bilinear_taps(in_len, out_len).into_iter().enumerate() {
        weights[o * in_len + lo] += 1.0 - t;
        weights[o * in_len + hi] += t;
    }
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let interp = Tensor::from_vec(weights, (1, out_len, in_len), x.device())?.to_dtype(x.dtype())?;
    let y = interp
        .broadcast_as((outer, out_len, in_len))?
        .contiguous()?
        .matmul(&x.reshape((outer, in_len, inner))?)?;
    let mut out = dims;
    out[axis] = out_len;
    Ok(y.reshape(out)?)
}

/// Bilinear resize of a `(B, H, W, C)` map, half-pixel centres.
pub fn resize_bilinear_nhwc(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let y = resize_axis(x, 1, out_h)?;
    resize_axis(&y, 2, out_w)
}

fn cubic_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.75;
    let w1 = |x: f64| ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0;
    let w2 = |x: f64| ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A;
    [w2(t + 1.0), w1(t), w1(1.0 - t), w2(2.0 - t)]
}

/// Bicubic resize (a = -0.75, half-pixel centres, clamped borders) of a
/// row-major `(h, w, c)` grid.
pub fn resize_bicubic_grid(
    data: &[f64],
    h: usize,
    w: usize,
    c: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let taps = |in_len: usize, out_len: usize| -> Vec<([usize; 4], [f64; 4])> {
        (0..out_len)
            .map(|o| {
                let src = (o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
                let base = src.floor();
                let idx = [-1i64, 0, 1, 2]
                    .map(|d| (base as i64 + d).clamp(0, in_len as i64 - 1) as usize);
                (idx, cubic_weights(src - base))
            })
            .collect()
    };
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut out = vec![0.0; out_h * out_w * c];
    for (oy, (iy, wy)) in ty.iter().enumerate() {
        for (ox, (ix, wx)) in tx.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        acc += wy[a] * wx[b] * data[(iy[a] * w + ix[b]) * c + ch];
                    }
                }
                out[(oy * out_w + ox) * c + ch] = acc;
            }
        }
    }
    out
}
