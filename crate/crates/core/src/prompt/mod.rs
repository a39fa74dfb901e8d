//! Visual prompts: the geometric cue a user draws on a frame, its JSON
//! document form, synthetic generation from ground-truth masks, and
//! rasterization onto the RGB image.

mod morph;
mod raster;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use morph::{
    components, distance_transform_sq, largest_component, skeleton_diameter_path, thin,
};
pub use raster::{render_prompt_overlay, stroke_coverage};
pub use synth::{gen_bbox, gen_long_scribble, gen_point, gen_prompt, gen_short_scribble};

/// Maximum number of vertices in a generated scribble.
pub const MAX_SCRIBBLE_VERTICES: usize = 64;

/// Fraction of the long scribble's arc length kept by the short scribble.
pub const SHORT_SCRIBBLE_FRACTION: f64 = 0.3;

pub const DEFAULT_COLOR: [u8; 3] = [0, 255, 0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    None,
    Point,
    ShortScribble,
    LongScribble,
    Bbox,
}

impl PromptKind {
    pub const ALL: [PromptKind; 5] = [
        PromptKind::None,
        PromptKind::Point,
        PromptKind::ShortScribble,
        PromptKind::LongScribble,
        PromptKind::Bbox,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::None => "none",
            PromptKind::Point => "point",
            PromptKind::ShortScribble => "short_scribble",
            PromptKind::LongScribble => "long_scribble",
            PromptKind::Bbox => "bbox",
        }
    }

    fn accepts_point_count(self, n: usize) -> bool {
        match self {
            PromptKind::None => n == 0,
            PromptKind::Point => n == 1,
            PromptKind::ShortScribble | PromptKind::LongScribble => n >= 2,
            PromptKind::Bbox => n == 2,
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PromptKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownPromptKind(s.to_string()))
    }
}

/// Pixel coordinate, `x` to the right and `y` down from the top-left corner.
/// Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point(pub i64, pub i64);

impl Point {
    pub fn x(self) -> i64 {
        self.0
    }

    pub fn y(self) -> i64 {
        self.1
    }

    pub(crate) fn from_xy(x: usize, y: usize) -> Self {
        Point(x as i64, y as i64)
    }

    pub fn dist(self, other: Point) -> f64 {
        (((self.0 - other.0).pow(2) + (self.1 - other.1).pow(2)) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VisualPrompt {
    pub kind: PromptKind,
    pub points: Vec<Point>,
    pub stroke_width: u32,
    pub color: [u8; 3],
}

pub fn default_stroke_width(height: usize, width: usize) -> u32 {
    let side = height.min(width) as f64;
    (0.008 * side).round().max(3.0) as u32
}

impl VisualPrompt {
    pub fn none() -> Self {
        Self {
            kind: PromptKind::None,
            points: Vec::new(),
            stroke_width: 3,
            color: DEFAULT_COLOR,
        }
    }

    pub fn new(kind: PromptKind, points: Vec<Point>, stroke_width: u32, color: [u8; 3]) -> Result<Self> {
        let prompt = Self {
            kind,
            points,
            stroke_width,
            color,
        };
        prompt.validate()?;
        Ok(prompt)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.kind.accepts_point_count(self.points.len()) {
            return Err(Error::InvalidConfig(format!(
                "{} prompt cannot have {} points",
                self.kind,
                self.points.len()
            )));
        }
        if self.stroke_width == 0 {
            return Err(Error::InvalidConfig("stroke_width must be >= 1".into()));
        }
        Ok(())
    }

    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        for p in &self.points {
            if p.0 < 0 || p.1 < 0 || p.0 >= width as i64 || p.1 >= height as i64 {
                return Err(Error::OutOfBounds {
                    x: p.0,
                    y: p.1,
                    width,
                    height,
                });
            }
        }
        Ok(())
    }

    /// Polyline arc length in pixels.
    pub fn arc_length(&self) -> f64 {
        arc_length(&self.points)
    }

    /// Parses a prompt document. `stroke_width` and `color` may be omitted;
    /// they then take the defaults for an image of the given size.
    pub fn from_document(value: &serde_json::Value, height: usize, width: usize) -> Result<Self> {
        let kind = value
            .get("kind")
            .and_then(serde_json::Value::as_str)
            .ok_or_else(|| Error::InvalidConfig("prompt document lacks a string `kind`".into()))?;
        let kind: PromptKind = kind.parse()?;
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            #[allow(dead_code)]
            kind: String,
            #[serde(default)]
            points: Vec<Point>,
            stroke_width: Option<u32>,
            color: Option<[u8; 3]>,
        }
        let doc: Doc = serde_json::from_value(value.clone())
            .map_err(|e| Error::InvalidConfig(format!("prompt document: {e}")))?;
        Self::new(
            kind,
            doc.points,
            doc.stroke_width
                .unwrap_or_else(|| default_stroke_width(height, width)),
            doc.color.unwrap_or(DEFAULT_COLOR),
        )
    }

    pub fn to_document(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("prompt serializes")
    }
}

pub(crate) fn arc_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[0].dist(w[1])).sum()
}
