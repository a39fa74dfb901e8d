//! Sample preparation shared by training, evaluation and serving:
//! prompt synthesis, overlay at native resolution, optional corruption,
//! resize to the model input. Prepared samples are cached in memory and,
//! when a directory is configured, on disk.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use crate::corrupt::{corrupt, CorruptionSpec};
use crate::data::{load_native_pair, resize_pair, ClassMask, ImageTensor, SampleRecord};
use crate::error::{Error, Result};
use crate::prompt::{gen_prompt, render_prompt_overlay, PromptKind, VisualPrompt};

/// Environment variable naming the on-disk cache directory.
pub const CACHE_ENV: &str = "PDZSEG_CACHE";
const CACHE_MAGIC: &[u8; 6] = b"PDZC1\n";
const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    /// Model-resolution image with the prompt painted in.
    pub image: ImageTensor,
    /// Model-resolution ground truth.
    pub mask: ClassMask,
    /// The prompt as drawn at native resolution.
    pub prompt: VisualPrompt,
}

impl PreparedSample {
    fn bytes(&self) -> usize {
        self.image.data().len() * 4 + self.mask.labels().len()
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

/// Per-sample corruption seed, independent of sample order.
pub fn sample_seed(base: u64, sample_id: &str) -> u64 {
    base ^ fnv1a(sample_id)
}

/// Synthesizes the prompt from the mask, overlays it, optionally corrupts
/// the rendered frame and resizes the pair. Masks without a dissection
/// zone get no prompt.
pub fn prepare_pair(
    image: &ImageTensor,
    mask: &ClassMask,
    kind: PromptKind,
    size: usize,
    corruption: Option<&CorruptionSpec>,
) -> Result<PreparedSample> {
    let prompt = match gen_prompt(kind, mask, 0) {
        Ok(p) => p,
        Err(Error::NoRegion) => gen_prompt(PromptKind::None, mask, 0)?,
        Err(e) => return Err(e),
    };
    let mut rendered = render_prompt_overlay(image, &prompt)?;
    if let Some(spec) = corruption {
        rendered = corrupt(&rendered, spec)?;
    }
    let (image, mask) = resize_pair(&rendered, mask, size)?;
    Ok(PreparedSample {
        image,
        mask,
        prompt,
    })
}

pub fn prepare_record(
    record: &SampleRecord,
    kind: PromptKind,
    size: usize,
    corruption: Option<&CorruptionSpec>,
) -> Result<PreparedSample> {
    let (image, mask) = load_native_pair(record)?;
    let spec = corruption.map(|c| CorruptionSpec {
        seed: sample_seed(c.seed, &record.sample_id),
        ..*c
    });
    prepare_pair(&image, &mask, kind, size, spec.as_ref())
}

/// Cache of uncorrupted prepared samples keyed by (files, kind, size).
pub struct SampleCache {
    dir: Option<PathBuf>,
    budget: usize,
    memory: Mutex<(HashMap<String, Arc<PreparedSample>>, usize)>,
}

impl SampleCache {
    pub fn new(dir: Option<PathBuf>, memory_budget: usize) -> Self {
        Self {
            dir,
            budget: memory_budget,
            memory: Mutex::new((HashMap::new(), 0)),
        }
    }

    /// Memory cache plus the directory in `PDZSEG_CACHE`, if set.
    pub fn from_env() -> Self {
        let dir = std::env::var_os(CACHE_ENV).map(PathBuf::from);
        Self::new(dir, DEFAULT_MEMORY_BUDGET)
    }

    pub fn disabled() -> Self {
        Self::new(None, 0)
    }

    fn key(record: &SampleRecord, kind: PromptKind, size: usize) -> Result<String> {
        let mut h = Sha256::new();
        for path in [&record.image_path, &record.mask_path] {
            let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
            h.update(path.to_string_lossy().as_bytes());
            h.update(meta.len().to_le_bytes());
            if let Ok(t) = meta.modified() {
                h.update(format!("{t:?}").as_bytes());
            }
        }
        h.update(kind.as_str().as_bytes());
        h.update((size as u64).to_le_bytes());
        Ok(crate::model::hex(&h.finalize()))
    }

    /// `record` must already be resolved against the manifest root.
    pub fn get(&self, record: &SampleRecord, kind: PromptKind, size: usize) -> Result<Arc<PreparedSample>> {
        if self.dir.is_none() && self.budget == 0 {
            return Ok(Arc::new(prepare_record(record, kind, size, None)?));
        }
        let key = Self::key(record, kind, size)?;
        if let Some(hit) = self.memory.lock().expect("cache lock").0.get(&key) {
            return Ok(Arc::clone(hit));
        }
        let disk_path = self.dir.as_ref().map(|d| d.join(format!("{key}.bin")));
        let sample = match disk_path.as_deref().map(read_entry) {
            Some(Ok(Some(s))) => s,
            _ => {
                let s = prepare_record(record, kind, size, None)?;
                if let Some(p) = &disk_path {
                    if let Err(e) = write_entry(p, &s) {
                        tracing::warn!(path = %p.display(), error = %e, "cache write failed");
                    }
                }
                s
            }
        };
        let sample = Arc::new(sample);
        let mut mem = self.memory.lock().expect("cache lock");
        if mem.1 + sample.bytes() <= self.budget {
            mem.1 += sample.bytes();
            mem.0.insert(key, Arc::clone(&sample));
        }
        Ok(sample)
    }
}

fn write_entry(path: &Path, s: &PreparedSample) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let prompt = serde_json::to_vec(&s.prompt.to_document())?;
    let mut buf = Vec::with_capacity(s.bytes() + prompt.len() + 32);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(s.image.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(s.image.width() as u32).to_le_bytes());
    for v in s.image.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(s.mask.labels());
    buf.extend_from_slice(&prompt);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, buf).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_entry(path: &Path) -> Result<Option<PreparedSample>> {
    let mut file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    let corrupt_entry = || Error::Checkpoint(format!("corrupt cache entry {}", path.display()));
    if buf.len() < 14 || &buf[..6] != CACHE_MAGIC {
        return Err(corrupt_entry());
    }
    let h = u32::from_le_bytes(buf[6..10].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(buf[10..14].try_into().expect("4 bytes")) as usize;
    let img_end = 14 + h * w * 12;
    let mask_end = img_end + h * w;
    if buf.len() < mask_end {
        return Err(corrupt_entry());
    }
    let data = buf[14..img_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let image = ImageTensor::new(h, w, data)?;
    let mask = ClassMask::new(h, w, buf[img_end..mask_end].to_vec())?;
    let doc: serde_json::Value = serde_json::from_slice(&buf[mask_end..])?;
    let prompt: VisualPrompt = serde_json::from_value(doc)?;
    Ok(Some(PreparedSample { image, mask, prompt }))
}
