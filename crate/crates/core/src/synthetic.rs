//! Synthetic stand-in scenes: reddish textured tissue with pale,
//! star-shaped zones.
//!
//! * single-blob scenes have one zone, visible without any prompt;
//! * two-blob scenes show two look-alike zones of which only one is the
//!   target, so the target is identifiable only through a prompt.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ClassMask, DatasetManifest, ImageTensor, SampleRecord, TEST, TRAIN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    SingleBlob,
    TwoBlob,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_blob" => Ok(SceneKind::SingleBlob),
            "two_blob" => Ok(SceneKind::TwoBlob),
            other => Err(Error::InvalidConfig(format!("unknown scene kind {other:?}"))),
        }
    }
}

/// Star-shaped region: a rotated ellipse whose radius wobbles with two
/// harmonics.
#[derive(Debug, Clone, Copy)]
struct Blob {
    cx: f64,
    cy: f64,
    radius: f64,
    /// Ratio of the major to the minor semi-axis.
    elongation: f64,
    angle: f64,
    wobble: [(f64, f64); 2],
}

impl Blob {
    fn random(rng: &mut impl Rng, cx: f64, cy: f64, radius: f64, elongation: f64) -> Self {
        Self {
            cx,
            cy,
            radius,
            elongation,
            angle: rng.random_range(0.0..std::f64::consts::PI),
            wobble: [
                (rng.random_range(0.0..0.12), rng.random_range(0.0..TAU)),
                (rng.random_range(0.0..0.06), rng.random_range(0.0..TAU)),
            ],
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (sin, cos) = self.angle.sin_cos();
        let s = self.elongation.sqrt();
        let u = (dx * cos + dy * sin) / s;
        let v = (dy * cos - dx * sin) * s;
        let theta = v.atan2(u);
        let r = self.radius
            * (1.0
                + self.wobble[0].0 * (2.0 * theta + self.wobble[0].1).cos()
                + self.wobble[1].0 * (3.0 * theta + self.wobble[1].1).cos());
        u * u + v * v <= r * r
    }

    /// Half-widths of the axis-aligned box enclosing the blob.
    fn half_extents(&self) -> (f64, f64) {
        let s = self.elongation.sqrt();
        let (a, b) = (self.radius * s, self.radius / s);
        let (sin, cos) = self.angle.sin_cos();
        let grow = 1.0 + self.wobble[0].0 + self.wobble[1].0;
        (
            (a * a * cos * cos + b * b * sin * sin).sqrt() * grow,
            (a * a * sin * sin + b * b * cos * cos).sqrt() * grow,
        )
    }

    fn pixels(&self, height: usize, width: usize) -> Vec<(usize, usize)> {
        (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.contains(x as f64, y as f64))
            .collect()
    }
}

fn paint(height: usize, width: usize, blobs: &[Blob], rng: &mut impl Rng) -> ImageTensor {
    let noise = Normal::new(0.0f64, 0.03).expect("valid std");
    let (fx, fy, phase) = (
        rng.random_range(1.0..3.0),
        rng.random_range(1.0..3.0),
        rng.random_range(0.0..TAU),
    );
    let tissue = [
        rng.random_range(0.50..0.65),
        rng.random_range(0.15..0.25),
        rng.random_range(0.12..0.20),
    ];
    let zone = [
        rng.random_range(0.80..0.90),
        rng.random_range(0.68..0.78),
        rng.random_range(0.66..0.76),
    ];
    let mut data = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
            let shade = 0.08 * (TAU * (fx * u + fy * v) + phase).sin();
            let base = if blobs.iter().any(|b| b.contains(x as f64, y as f64)) {
                zone
            } else {
                tissue
            };
            for c in base {
                data.push((c + shade + noise.sample(rng)).clamp(0.0, 1.0) as f32);
            }
        }
    }
    ImageTensor::new(height, width, data).expect("values clamped")
}

/// One pale zone on tissue; the zone is the target.
pub fn single_blob_scene(height: usize, width: usize, rng: &mut impl Rng) -> (ImageTensor, ClassMask) {
    let side = height.min(width) as f64;
    let radius = rng.random_range(0.16..0.24) * side;
    let elongation = rng.random_range(1.0..2.0);
    let blob = place(rng, height, width, radius, elongation);
    let image = paint(height, width, &[blob], rng);
    let mask = ClassMask::from_fn(height, width, |x, y| blob.contains(x as f64, y as f64));
    (image, mask)
}

fn place(rng: &mut impl Rng, height: usize, width: usize, radius: f64, elongation: f64) -> Blob {
    let mut blob = Blob::random(rng, 0.0, 0.0, radius, elongation);
    let (hx, hy) = blob.half_extents();
    let span = |half: f64, len: usize| {
        let lo = (half + 1.0).min(len as f64 / 2.0);
        (lo, (len as f64 - 1.0 - half).max(lo + 1e-6))
    };
    let (x0, x1) = span(hx, width);
    let (y0, y1) = span(hy, height);
    blob.cx = rng.random_range(x0..x1);
    blob.cy = rng.random_range(y0..y1);
    blob
}

/// Two look-alike elongated zones at least `0.05 * side` apart; a fair
/// coin picks which one is the target.
pub fn two_blob_scene(height: usize, width: usize, rng: &mut impl Rng) -> (ImageTensor, ClassMask) {
    let side = height.min(width) as f64;
    let min_gap = (0.05 * side).max(2.0);
    loop {
        let blobs: Vec<Blob> = (0..2)
            .map(|_| {
                let radius = rng.random_range(0.11..0.14) * side;
                let elongation = rng.random_range(2.0..3.0);
                place(rng, height, width, radius, elongation)
            })
            .collect();
        let (a, b) = (blobs[0].pixels(height, width), blobs[1].pixels(height, width));
        let apart = a.iter().all(|&(ax, ay)| {
            b.iter().all(|&(bx, by)| {
                let (dx, dy) = (ax as f64 - bx as f64, ay as f64 - by as f64);
                dx * dx + dy * dy >= min_gap * min_gap
            })
        });
        if a.is_empty() || b.is_empty() || !apart {
            continue;
        }
        let target = blobs[usize::from(rng.random_bool(0.5))];
        let image = paint(height, width, &blobs, rng);
        let mask = ClassMask::from_fn(height, width, |x, y| target.contains(x as f64, y as f64));
        return (image, mask);
    }
}

pub fn scene(kind: SceneKind, height: usize, width: usize, rng: &mut impl Rng) -> (ImageTensor, ClassMask) {
    match kind {
        SceneKind::SingleBlob => single_blob_scene(height, width, rng),
        SceneKind::TwoBlob => two_blob_scene(height, width, rng),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SceneKind,
    pub n_train: usize,
    pub n_test: usize,
    pub height: usize,
    pub width: usize,
    /// Consecutive frames per pseudo-video.
    pub frames_per_video: usize,
    pub seed: u64,
}

/// In-memory scenes, deterministic in `seed`.
pub fn generate_scenes(kind: SceneKind, n: usize, height: usize, width: usize, seed: u64) -> Vec<(ImageTensor, ClassMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| scene(kind, height, width, &mut rng)).collect()
}

/// Writes PNG pairs under `dir/{images,masks}` and `dir/manifest.json`,
/// splitting train and test by pseudo-video.
pub fn write_dataset(dir: &Path, spec: &SyntheticSpec) -> Result<DatasetManifest> {
    if spec.frames_per_video == 0 || spec.height < 16 || spec.width < 16 {
        return Err(Error::InvalidConfig(
            "frames_per_video must be positive and sides at least 16".into(),
        ));
    }
    for sub in ["images", "masks"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::new();
    let mut split: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (split_name, count) in [(TRAIN, spec.n_train), (TEST, spec.n_test)] {
        let videos = split.entry(split_name.to_string()).or_default();
        for i in 0..count {
            let video = format!("{split_name}-{:03}", i / spec.frames_per_video);
            if videos.last() != Some(&video) {
                videos.push(video.clone());
            }
            let id = format!("{split_name}-{i:05}");
            let (image, mask) = scene(spec.kind, spec.height, spec.width, &mut rng);
            let image_rel = Path::new("images").join(format!("{id}.png"));
            let mask_rel = Path::new("masks").join(format!("{id}.png"));
            image.save_png(&dir.join(&image_rel))?;
            mask.save_png(&dir.join(&mask_rel))?;
            samples.push(SampleRecord {
                sample_id: id,
                video_id: video,
                image_path: image_rel,
                mask_path: mask_rel,
            });
        }
    }
    let mut manifest = DatasetManifest::new(samples, split);
    manifest.validate()?;
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json()?).map_err(|e| Error::io(&path, e))?;
    manifest = DatasetManifest::from_json(&manifest.to_json()?, dir)?;
    Ok(manifest)
}
