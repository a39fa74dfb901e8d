//! Safetensors checkpoints with the model configuration in the header
//! metadata.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use super::ops::{resize_bicubic_grid, Param, Parameterized};
use super::{ModelConfig, Segmenter};
use crate::error::{Error, Result};

const CONFIG_KEY: &str = "pdzseg.config";
const POS_EMBED: &str = "encoder.pos_embed";

fn st_err(e: safetensors::SafeTensorError) -> Error {
    Error::Checkpoint(e.to_string())
}

fn tensor_bytes(t: &Tensor) -> Result<(Dtype, Vec<usize>, Vec<u8>)> {
    let shape = t.dims().to_vec();
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => (
            Dtype::F64,
            shape,
            flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        _ => (
            Dtype::F32,
            shape,
            flat.to_dtype(DType::F32)?
                .to_vec1::<f32>()?
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect(),
        ),
    })
}

fn view_to_tensor(view: &TensorView<'_>, dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let data = view.data();
    let t = match view.dtype() {
        Dtype::F32 => {
            let v: Vec<f32> = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::from_vec(v, view.shape(), device)?
        }
        Dtype::F64 => {
            let v: Vec<f64> = data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Tensor::from_vec(v, view.shape(), device)?
        }
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    };
    Ok(t.to_dtype(dtype)?)
}

fn write(path: &Path, tensors: Vec<(String, Tensor)>, config: &ModelConfig) -> Result<()> {
    let mut owned = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        owned.push((name, tensor_bytes(&t)?));
    }
    let views = owned
        .iter()
        .map(|(name, (dtype, shape, bytes))| Ok((name.clone(), TensorView::new(*dtype, shape.clone(), bytes).map_err(st_err)?)))
        .collect::<Result<Vec<_>>>()?;
    let meta = HashMap::from([(CONFIG_KEY.to_string(), serde_json::to_string(config)?)]);
    let bytes = safetensors::serialize(views, Some(meta)).map_err(st_err)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes every parameter, frozen or trainable.
pub fn save_checkpoint(model: &Segmenter, path: &Path) -> Result<()> {
    let tensors = model
        .named_params()
        .into_iter()
        .map(|(n, p)| (n, p.tensor().clone()))
        .collect();
    write(path, tensors, &model.config)
}

/// Writes only the low-rank adapter pairs.
pub fn save_adapters(model: &Segmenter, path: &Path) -> Result<()> {
    let tensors = model
        .named_params()
        .into_iter()
        .filter(|(n, _)| n.contains(".adapter."))
        .map(|(n, p)| (n, p.tensor().clone()))
        .collect::<Vec<_>>();
    if tensors.is_empty() {
        return Err(Error::Checkpoint("model has no adapters".into()));
    }
    write(path, tensors, &model.config)
}

/// Reads the model configuration stored in a checkpoint header without
/// loading any tensor.
pub fn read_checkpoint_config(path: &Path) -> Result<ModelConfig> {
    if !path.exists() {
        return Err(Error::DanglingReference {
            path: path.to_path_buf(),
        });
    }
    let bytes = read(path)?;
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(st_err)?;
    let text = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(CONFIG_KEY))
        .ok_or_else(|| Error::Checkpoint(format!("{} has no model config", path.display())))?;
    Ok(serde_json::from_str(text)?)
}

/// Rebuilds a model from a full checkpoint. When the stored positional
/// table covers a different grid, it is bicubically resampled.
pub fn load_checkpoint(path: &Path) -> Result<Segmenter> {
    let config = read_checkpoint_config(path)?;
    let bytes = read(path)?;
    let mut model = Segmenter::new(config, 0)?;
    let n = assign(&mut model, &bytes, "", true)?;
    tracing::debug!(path = %path.display(), tensors = n, "loaded checkpoint");
    Ok(model)
}

/// Loads a config-specific checkpoint into a model built for another
/// input size, e.g. to serve at a different resolution.
pub fn load_matching(model: &mut Segmenter, path: &Path, prefix: &str) -> Result<usize> {
    let bytes = read(path)?;
    assign(model, &bytes, prefix, false)
}

pub fn load_adapters(model: &mut Segmenter, path: &Path) -> Result<usize> {
    if !model.encoder.has_adapters() {
        return Err(Error::Checkpoint("model has no adapters to load into".into()));
    }
    let bytes = read(path)?;
    assign(model, &bytes, "encoder.", false).and_then(|n| {
        if n == 0 {
            Err(Error::Checkpoint(format!("{} holds no adapter tensors", path.display())))
        } else {
            Ok(n)
        }
    })
}

fn resample_positions(stored: &Tensor, target: &[usize]) -> Result<Tensor> {
    let (_, n_in, d) = stored.dims3()?;
    let n_out = target[1];
    let g_in = ((n_in - 1) as f64).sqrt().round() as usize;
    let g_out = ((n_out - 1) as f64).sqrt().round() as usize;
    if g_in * g_in + 1 != n_in || g_out * g_out + 1 != n_out || target[2] != d {
        return Err(Error::ShapeMismatch(format!(
            "cannot resample positions {:?} to {target:?}",
            stored.dims()
        )));
    }
    let values = stored.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let grid = resize_bicubic_grid(&values[d..], g_in, g_in, d, g_out, g_out);
    let mut out = values[..d].to_vec();
    out.extend(grid);
    Ok(Tensor::from_vec(out, (1, n_out, d), stored.device())?.to_dtype(stored.dtype())?)
}

/// Copies stored tensors whose names start with `prefix` into `model`.
/// With `require_all`, every model parameter must be present.
fn assign(model: &mut Segmenter, bytes: &[u8], prefix: &str, require_all: bool) -> Result<usize> {
    let st = SafeTensors::deserialize(bytes).map_err(st_err)?;
    let dtype = model.dtype();
    let device = model.device().clone();
    let mut loaded = 0;
    let mut failure = None;
    model.visit_mut("", &mut |name, param: &mut Param| {
        if failure.is_some() || !name.starts_with(prefix) {
            return;
        }
        let result = (|| -> Result<bool> {
            let view = match st.tensor(name) {
                Ok(v) => v,
                Err(_) if !require_all => return Ok(false),
                Err(_) => return Err(Error::Checkpoint(format!("missing tensor {name}"))),
            };
            let mut value = view_to_tensor(&view, dtype, &device)?;
            let want = param.tensor().dims().to_vec();
            if value.dims() != want.as_slice() {
                if name == POS_EMBED {
                    value = resample_positions(&value, &want)?;
                } else {
                    return Err(Error::ShapeMismatch(format!(
                        "{name}: stored {:?}, model {:?}",
                        value.dims(),
                        want
                    )));
                }
            }
            param.replace(value)?;
            Ok(true)
        })();
        match result {
            Ok(true) => loaded += 1,
            Ok(false) => {}
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(loaded),
    }
}
