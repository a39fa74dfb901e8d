//! Image corruptions for robustness evaluation, parameterized by the
//! common-corruptions severity tables (levels 1 to 5).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::ImageTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    MotionBlur,
    /// Plasma-fractal haze, i.e. the benchmark's fog corruption.
    Smoke,
    Brightness,
    Contrast,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::MotionBlur,
        CorruptionKind::Smoke,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::MotionBlur => "motion_blur",
            CorruptionKind::Smoke => "smoke",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "fog" {
            return Ok(CorruptionKind::Smoke);
        }
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown corruption {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        let spec = Self {
            kind,
            severity,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if (1..=5).contains(&self.severity) {
            Ok(())
        } else {
            Err(Error::BadSeverity(self.severity))
        }
    }

    fn level(&self) -> usize {
        usize::from(self.severity - 1)
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.kind, self.severity)
    }
}

pub const GAUSSIAN_NOISE_STD: [f32; 5] = [0.08, 0.12, 0.18, 0.26, 0.38];
/// `(radius, sigma)` of the one-sided motion kernel.
pub const MOTION_BLUR: [(usize, f64); 5] = [(10, 3.0), (15, 5.0), (15, 8.0), (15, 12.0), (20, 15.0)];
/// `(haze strength, plasma wibble decay)`.
pub const SMOKE: [(f32, f64); 5] = [(1.5, 2.0), (2.0, 2.0), (2.5, 1.7), (2.5, 1.5), (3.0, 1.4)];
pub const BRIGHTNESS_SHIFT: [f32; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const CONTRAST_FACTOR: [f32; 5] = [0.4, 0.3, 0.2, 0.1, 0.05];

pub fn corrupt(image: &ImageTensor, spec: &CorruptionSpec) -> Result<ImageTensor> {
    spec.validate()?;
    let lvl = spec.level();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(match spec.kind {
        CorruptionKind::GaussianNoise => gaussian_noise(image, GAUSSIAN_NOISE_STD[lvl], &mut rng),
        CorruptionKind::MotionBlur => {
            let (radius, sigma) = MOTION_BLUR[lvl];
            let angle = rng.random_range(-45.0..45.0);
            motion_blur(image, radius, sigma, angle)
        }
        CorruptionKind::Smoke => {
            let (strength, decay) = SMOKE[lvl];
            smoke(image, strength, decay, &mut rng)
        }
        CorruptionKind::Brightness => brightness(image, BRIGHTNESS_SHIFT[lvl]),
        CorruptionKind::Contrast => contrast(image, CONTRAST_FACTOR[lvl]),
    })
}

fn gaussian_noise(image: &ImageTensor, std: f32, rng: &mut ChaCha8Rng) -> ImageTensor {
    let normal = Normal::new(0.0f32, std).expect("positive std");
    let data = image
        .data()
        .iter()
        .map(|&v| (v + normal.sample(rng)).clamp(0.0, 1.0))
        .collect();
    ImageTensor::from_raw(image.height(), image.width(), data)
}

/// Sum of one-sided Gaussian-weighted copies shifted along `angle_deg`,
/// replicating edges.
pub fn motion_blur(image: &ImageTensor, radius: usize, sigma: f64, angle_deg: f64) -> ImageTensor {
    let width = 2 * radius + 1;
    let weights: Vec<f64> = (0..width)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    let (h, w) = (image.height() as i64, image.width() as i64);
    let (py, px) = (angle_deg.to_radians().sin(), angle_deg.to_radians().cos());
    let mut acc = vec![0.0f64; image.data().len()];
    for (i, wt) in weights.iter().enumerate() {
        let dy = -((i as f64 * py) - 0.5).ceil() as i64;
        let dx = -((i as f64 * px) - 0.5).ceil() as i64;
        if dy.abs() >= h || dx.abs() >= w {
            break;
        }
        let k = wt / z;
        for y in 0..h {
            let sy = (y - dy).clamp(0, h - 1);
            for x in 0..w {
                let sx = (x - dx).clamp(0, w - 1);
                let src = ((sy * w + sx) * 3) as usize;
                let dst = ((y * w + x) * 3) as usize;
                for c in 0..3 {
                    acc[dst + c] += k * f64::from(image.data()[src + c]);
                }
            }
        }
    }
    let data = acc.into_iter().map(|v| (v as f32).clamp(0.0, 1.0)).collect();
    ImageTensor::from_raw(image.height(), image.width(), data)
}

/// Diamond-square plasma fractal normalized to `[0, 1]`; `size` must be a
/// power of two.
pub fn plasma_fractal(size: usize, wibble_decay: f64, rng: &mut impl Rng) -> Vec<f64> {
    assert!(size.is_power_of_two());
    let mut map = vec![0.0f64; size * size];
    let at = |r: usize, c: usize| r * size + c;
    let mut step = size;
    let mut wibble = 100.0f64;
    while step >= 2 {
        let half = step / 2;
        let mut jitter = |v: f64| v / 4.0 + wibble * rng.random_range(-wibble..wibble);
        // Squares: centres from the four surrounding corners (wrapping).
        for r in (0..size).step_by(step) {
            for c in (0..size).step_by(step) {
                let r2 = (r + step) % size;
                let c2 = (c + step) % size;
                let s = map[at(r, c)] + map[at(r2, c)] + map[at(r, c2)] + map[at(r2, c2)];
                map[at(r + half, c + half)] = jitter(s);
            }
        }
        // Diamonds: edge midpoints from two corners and two centres.
        for r in (0..size).step_by(step) {
            for c in (0..size).step_by(step) {
                let c2 = (c + step) % size;
                let up = (r + size - half) % size;
                let s = map[at(r + half, c + half)]
                    + map[at(up, c + half)]
                    + map[at(r, c)]
                    + map[at(r, c2)];
                map[at(r, c + half)] = jitter(s);
            }
        }
        for r in (0..size).step_by(step) {
            for c in (0..size).step_by(step) {
                let r2 = (r + step) % size;
                let left = (c + size - half) % size;
                let s = map[at(r + half, c + half)]
                    + map[at(r + half, left)]
                    + map[at(r, c)]
                    + map[at(r2, c)];
                map[at(r + half, c)] = jitter(s);
            }
        }
        step = half;
        wibble /= wibble_decay;
    }
    let min = map.iter().copied().fold(f64::INFINITY, f64::min);
    let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if max > min { max - min } else { 1.0 };
    map.iter().map(|v| (v - min) / range).collect()
}

fn smoke(image: &ImageTensor, strength: f32, decay: f64, rng: &mut ChaCha8Rng) -> ImageTensor {
    let (h, w) = (image.height(), image.width());
    let size = h.max(w).max(3).next_power_of_two();
    let haze = plasma_fractal(size, decay, rng);
    let max_val = image.data().iter().copied().fold(0.0f32, f32::max);
    let scale = max_val / (max_val + strength);
    let mut data = Vec::with_capacity(image.data().len());
    for y in 0..h {
        for x in 0..w {
            let p = strength * haze[y * size + x] as f32;
            for v in image.pixel(x, y) {
                data.push(((v + p) * scale).clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::from_raw(h, w, data)
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = (h * 6.0).rem_euclid(6.0);
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Adds `shift` to the HSV value channel.
fn brightness(image: &ImageTensor, shift: f32) -> ImageTensor {
    let data = image
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            let [h, s, v] = rgb_to_hsv([px[0], px[1], px[2]]);
            hsv_to_rgb([h, s, (v + shift).clamp(0.0, 1.0)]).map(|c| c.clamp(0.0, 1.0))
        })
        .collect();
    ImageTensor::from_raw(image.height(), image.width(), data)
}

/// Per-channel spatial mean. Each row is reduced by pairing mirrored
/// columns so the result is bitwise identical for a horizontally flipped
/// image.
fn channel_means(image: &ImageTensor) -> [f64; 3] {
    let (h, w) = (image.height(), image.width());
    let mut sums = [0.0f64; 3];
    for y in 0..h {
        for (c, sum) in sums.iter_mut().enumerate() {
            let px = |x: usize| f64::from(image.pixel(x, y)[c]);
            let mut row = 0.0;
            for x in 0..w / 2 {
                row += px(x) + px(w - 1 - x);
            }
            if w % 2 == 1 {
                row += px(w / 2);
            }
            *sum += row;
        }
    }
    sums.map(|s| s / (h * w) as f64)
}

/// Scales each channel about its mean by `factor`.
pub fn contrast(image: &ImageTensor, factor: f32) -> ImageTensor {
    let means = channel_means(image).map(|m| m as f32);
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v * factor + means[i % 3] * (1.0 - factor)).clamp(0.0, 1.0))
        .collect();
    ImageTensor::from_raw(image.height(), image.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(h: usize, w: usize) -> ImageTensor {
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.push(x as f32 / w as f32);
                data.push(y as f32 / h as f32);
                data.push(((x * 7 + y * 3) % 17) as f32 / 17.0);
            }
        }
        ImageTensor::new(h, w, data).unwrap()
    }

    #[test]
    fn unit_contrast_is_identity() {
        let img = gradient_image(9, 13);
        assert_eq!(contrast(&img, 1.0), img);
    }

    #[test]
    fn bad_severity() {
        assert!(matches!(
            CorruptionSpec::new(CorruptionKind::Smoke, 0, 1),
            Err(Error::BadSeverity(0))
        ));
        let spec = CorruptionSpec {
            kind: CorruptionKind::Contrast,
            severity: 6,
            seed: 0,
        };
        assert!(corrupt(&gradient_image(4, 4), &spec).is_err());
    }

    #[test]
    fn hsv_round_trip() {
        for px in gradient_image(6, 6).data().chunks(3) {
            let rgb = [px[0], px[1], px[2]];
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-5, "{rgb:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn zero_angle_blur_of_constant_row_is_constant() {
        let img = ImageTensor::filled(5, 40, [0.3, 0.6, 0.9]);
        let out = motion_blur(&img, 10, 3.0, 0.0);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn plasma_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = plasma_fractal(64, 2.0, &mut rng);
        let min = map.iter().copied().fold(f64::INFINITY, f64::min);
        let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((min, max), (0.0, 1.0));
    }

    #[test]
    fn fog_alias() {
        assert_eq!("fog".parse::<CorruptionKind>().unwrap(), CorruptionKind::Smoke);
        assert_eq!("smoke".parse::<CorruptionKind>().unwrap(), CorruptionKind::Smoke);
    }
}
