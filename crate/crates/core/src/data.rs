//! Image and mask containers, the dataset manifest, and pair loading.
//!
//! Images are stored row-major, channels-last, as `f32` in `[0, 1]`. Masks
//! hold one class index per pixel: `0` for the no-go zone and `1` for the
//! dissection zone.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NO_GO: u8 = 0;
pub const DISSECTION: u8 = 1;
pub const NUM_CLASSES: usize = 2;

/// Smallest side accepted by [`load_pair`].
pub const MIN_TARGET_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height}x3 image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from values already known to lie in `[0, 1]`.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * 3);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self::from_raw(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
        Self::from_raw(img.height() as usize, img.width() as usize, data)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    /// Bilinear resize with half-pixel centers and edge clamping.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Self {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        let ys = bilinear_taps(self.height, out_h);
        let xs = bilinear_taps(self.width, out_w);
        let mut data = Vec::with_capacity(out_h * out_w * 3);
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                for c in 0..3 {
                    let p = |x: usize, y: usize| self.data[(y * self.width + x) * 3 + c];
                    let top = p(x0, y0) * (1.0 - wx) + p(x1, y0) * wx;
                    let bottom = p(x0, y1) * (1.0 - wx) + p(x1, y1) * wx;
                    data.push((top * (1.0 - wy) + bottom * wy).clamp(0.0, 1.0));
                }
            }
        }
        Self::from_raw(out_h, out_w, data)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.width - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }
}

/// Source taps `(lo, hi, weight_of_hi)` for each output index of a 1-D
/// bilinear resize using half-pixel centers.
pub(crate) fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

fn nearest_index(o: usize, in_len: usize, out_len: usize) -> usize {
    (((o as f64 + 0.5) * in_len as f64 / out_len as f64).floor() as usize).min(in_len - 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl ClassMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l > DISSECTION) {
            return Err(Error::BadLabel { label });
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![NO_GO; height * width],
        }
    }

    /// Builds a mask marking every pixel for which `f(x, y)` is true.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut labels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                labels.push(u8::from(f(x, y)));
            }
        }
        Self {
            height,
            width,
            labels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn is_zone(&self, x: usize, y: usize) -> bool {
        self.get(x, y) == DISSECTION
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        debug_assert!(label <= DISSECTION);
        self.labels[y * self.width + x] = label;
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn from_luma8(img: &GrayImage) -> Result<Self> {
        Self::new(
            img.height() as usize,
            img.width() as usize,
            img.as_raw().clone(),
        )
    }

    pub fn to_luma8(&self) -> GrayImage {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .expect("buffer length matches dimensions")
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        Self::from_luma8(&img)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_luma8().save(path)?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_luma8()
            .write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    /// Nearest-neighbour resize; never produces labels absent from the source.
    pub fn resize_nearest(&self, out_h: usize, out_w: usize) -> Self {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        let xs: Vec<usize> = (0..out_w)
            .map(|o| nearest_index(o, self.width, out_w))
            .collect();
        let mut labels = Vec::with_capacity(out_h * out_w);
        for oy in 0..out_h {
            let y = nearest_index(oy, self.height, out_h);
            labels.extend(xs.iter().map(|&x| self.get(x, y)));
        }
        Self {
            height: out_h,
            width: out_w,
            labels,
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |x, y| {
            self.is_zone(self.width - 1 - x, y)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(rename = "id")]
    pub sample_id: String,
    #[serde(rename = "video")]
    pub video_id: String,
    #[serde(rename = "image")]
    pub image_path: PathBuf,
    #[serde(rename = "mask")]
    pub mask_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub samples: Vec<SampleRecord>,
    #[serde(default)]
    pub split: BTreeMap<String, Vec<String>>,
    /// Directory relative sample paths resolve against; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

pub const MANIFEST_VERSION: u32 = 1;
pub const TRAIN: &str = "train";
pub const TEST: &str = "test";

impl DatasetManifest {
    pub fn new(samples: Vec<SampleRecord>, split: BTreeMap<String, Vec<String>>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            samples,
            split,
            root: PathBuf::new(),
        }
    }

    /// Parses and validates manifest text without touching the filesystem.
    pub fn from_json(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
        manifest.root = root.into();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::MalformedManifest(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.sample_id.as_str()) {
                return Err(Error::MalformedManifest(format!(
                    "duplicate sample id {:?}",
                    s.sample_id
                )));
            }
        }
        let videos: HashSet<&str> = self.samples.iter().map(|s| s.video_id.as_str()).collect();
        for (name, vids) in &self.split {
            if let Some(v) = vids.iter().find(|v| !videos.contains(v.as_str())) {
                return Err(Error::MalformedManifest(format!(
                    "split {name:?} names video {v:?} with no samples"
                )));
            }
        }
        if let (Some(train), Some(test)) = (self.split.get(TRAIN), self.split.get(TEST)) {
            let test: HashSet<&str> = test.iter().map(String::as_str).collect();
            if let Some(v) = train.iter().find(|v| test.contains(v.as_str())) {
                return Err(Error::SplitOverlap { video: v.clone() });
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    pub fn check_files(&self) -> Result<()> {
        for s in &self.samples {
            for p in [&s.image_path, &s.mask_path] {
                let full = self.resolve(p);
                if !full.exists() {
                    return Err(Error::DanglingReference { path: full });
                }
            }
        }
        Ok(())
    }

    /// Samples belonging to a named split. When no explicit `train` split is
    /// given, training uses every video outside `test`.
    pub fn split_samples(&self, name: &str) -> Vec<&SampleRecord> {
        match self.split.get(name) {
            Some(vids) => {
                let vids: HashSet<&str> = vids.iter().map(String::as_str).collect();
                self.samples
                    .iter()
                    .filter(|s| vids.contains(s.video_id.as_str()))
                    .collect()
            }
            None if name == TRAIN => {
                let test: HashSet<&str> = self
                    .split
                    .get(TEST)
                    .map(|v| v.iter().map(String::as_str).collect())
                    .unwrap_or_default();
                self.samples
                    .iter()
                    .filter(|s| !test.contains(s.video_id.as_str()))
                    .collect()
            }
            None => Vec::new(),
        }
    }

    /// Absolute-path copy of a record.
    pub fn resolved(&self, record: &SampleRecord) -> SampleRecord {
        SampleRecord {
            image_path: self.resolve(&record.image_path),
            mask_path: self.resolve(&record.mask_path),
            ..record.clone()
        }
    }
}

/// Reads, validates and checks file references of a manifest document.
pub fn parse_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.exists() {
        return Err(Error::DanglingReference {
            path: path.to_path_buf(),
        });
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = DatasetManifest::from_json(&text, root)?;
    manifest.check_files()?;
    Ok(manifest)
}

/// Loads an image/mask pair at native resolution.
pub fn load_native_pair(record: &SampleRecord) -> Result<(ImageTensor, ClassMask)> {
    for p in [&record.image_path, &record.mask_path] {
        if !p.exists() {
            return Err(Error::DanglingReference { path: p.clone() });
        }
    }
    let image = ImageTensor::load_png(&record.image_path)?;
    let mask = ClassMask::load_png(&record.mask_path)?;
    if (image.height(), image.width()) != (mask.height(), mask.width()) {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} vs mask {}x{} for sample {}",
            image.width(),
            image.height(),
            mask.width(),
            mask.height(),
            record.sample_id
        )));
    }
    Ok((image, mask))
}

/// Resizes a native pair to `target_size` square: bilinear for the image,
/// nearest-neighbour for the mask.
pub fn resize_pair(
    image: &ImageTensor,
    mask: &ClassMask,
    target_size: usize,
) -> Result<(ImageTensor, ClassMask)> {
    if target_size < MIN_TARGET_SIZE {
        return Err(Error::InvalidConfig(format!(
            "target size {target_size} below minimum {MIN_TARGET_SIZE}"
        )));
    }
    if (image.height(), image.width()) != (mask.height(), mask.width()) {
        return Err(Error::ShapeMismatch("image and mask sizes differ".into()));
    }
    Ok((
        image.resize_bilinear(target_size, target_size),
        mask.resize_nearest(target_size, target_size),
    ))
}

pub fn load_pair(record: &SampleRecord, target_size: usize) -> Result<(ImageTensor, ClassMask)> {
    let (image, mask) = load_native_pair(record)?;
    resize_pair(&image, &mask, target_size)
}
