//! Deterministic prompt synthesis from ground-truth masks.
//!
//! Every generator takes a `seed`. None of the current constructions need
//! randomness, so the seed only pins the output for reproducibility; ties
//! are broken in row-major order.

use super::morph::{distance_transform_sq, largest_component, skeleton_diameter_path, thin};
use super::{
    arc_length, default_stroke_width, Point, PromptKind, VisualPrompt, DEFAULT_COLOR,
    MAX_SCRIBBLE_VERTICES, SHORT_SCRIBBLE_FRACTION,
};
use crate::data::ClassMask;
use crate::error::{Error, Result};

fn zone(mask: &ClassMask) -> Vec<bool> {
    mask.labels().iter().map(|&l| l == crate::data::DISSECTION).collect()
}

fn main_region(mask: &ClassMask) -> Result<Vec<bool>> {
    largest_component(&zone(mask), mask.width(), mask.height()).ok_or(Error::NoRegion)
}

fn styled(mask: &ClassMask, kind: PromptKind, points: Vec<Point>) -> VisualPrompt {
    VisualPrompt {
        kind,
        points,
        stroke_width: default_stroke_width(mask.height(), mask.width()),
        color: DEFAULT_COLOR,
    }
}

fn deepest_pixel(region: &[bool], width: usize, height: usize) -> Point {
    let dist = distance_transform_sq(region, width, height);
    let mut best = 0;
    for (i, &d) in dist.iter().enumerate() {
        if d > dist[best] {
            best = i;
        }
    }
    Point::from_xy(best % width, best / width)
}

/// The deepest interior pixel (distance-transform argmax) of the largest
/// dissection-zone component.
pub fn gen_point(mask: &ClassMask, _seed: u64) -> Result<VisualPrompt> {
    let region = main_region(mask)?;
    let p = deepest_pixel(&region, mask.width(), mask.height());
    Ok(styled(mask, PromptKind::Point, vec![p]))
}

/// Tight inclusive bounding box of every dissection-zone pixel.
pub fn gen_bbox(mask: &ClassMask, _seed: u64) -> Result<VisualPrompt> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.is_zone(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(Error::NoRegion);
    }
    Ok(styled(
        mask,
        PromptKind::Bbox,
        vec![Point::from_xy(x0, y0), Point::from_xy(x1, y1)],
    ))
}

/// Dense skeleton diameter path of the largest component, in pixel steps.
fn dense_long_path(mask: &ClassMask) -> Result<Vec<Point>> {
    let (w, h) = (mask.width(), mask.height());
    let region = main_region(mask)?;
    let skeleton = thin(&region, w, h);
    let path: Vec<Point> = skeleton_diameter_path(&skeleton, w, h)
        .into_iter()
        .map(|(x, y)| Point::from_xy(x, y))
        .collect();
    Ok(if path.is_empty() {
        // Thinning can erase blobs no thicker than two pixels.
        vec![deepest_pixel(&region, w, h)]
    } else {
        path
    })
}

fn subsample(path: &[Point], max: usize) -> Vec<Point> {
    if path.len() == 1 {
        return vec![path[0], path[0]];
    }
    if path.len() <= max {
        return path.to_vec();
    }
    let last = (path.len() - 1) as f64;
    (0..max)
        .map(|i| path[(i as f64 * last / (max - 1) as f64).round() as usize])
        .collect()
}

/// Skeleton diameter path, subsampled to at most 64 vertices.
pub fn gen_long_scribble(mask: &ClassMask, _seed: u64) -> Result<VisualPrompt> {
    let dense = dense_long_path(mask)?;
    Ok(styled(
        mask,
        PromptKind::LongScribble,
        subsample(&dense, MAX_SCRIBBLE_VERTICES),
    ))
}

/// Point at arc length `s` along a polyline, with the index of the segment
/// it falls on.
fn point_at(points: &[Point], s: f64) -> (usize, f64, f64) {
    let mut acc = 0.0;
    for (i, w) in points.windows(2).enumerate() {
        let len = w[0].dist(w[1]);
        if acc + len >= s && len > 0.0 {
            let t = ((s - acc) / len).clamp(0.0, 1.0);
            let x = w[0].0 as f64 + t * (w[1].0 - w[0].0) as f64;
            let y = w[0].1 as f64 + t * (w[1].1 - w[0].1) as f64;
            return (i, x, y);
        }
        acc += len;
    }
    let p = points[points.len() - 1];
    (points.len() - 2, p.0 as f64, p.1 as f64)
}

/// Central 30% (by arc length) of the long scribble.
pub fn gen_short_scribble(mask: &ClassMask, seed: u64) -> Result<VisualPrompt> {
    let long = gen_long_scribble(mask, seed)?;
    let total = arc_length(&long.points);
    if total == 0.0 {
        return Ok(VisualPrompt {
            kind: PromptKind::ShortScribble,
            ..long
        });
    }
    let dense = dense_long_path(mask)?;
    let snap = |x: f64, y: f64| -> Point {
        let p = Point(x.round() as i64, y.round() as i64);
        if mask.is_zone(p.0 as usize, p.1 as usize) {
            return p;
        }
        *dense
            .iter()
            .min_by(|a, b| a.dist(p).total_cmp(&b.dist(p)))
            .expect("dense path is non-empty")
    };
    let margin = (1.0 - SHORT_SCRIBBLE_FRACTION) / 2.0;
    let (i0, x0, y0) = point_at(&long.points, margin * total);
    let (i1, x1, y1) = point_at(&long.points, (1.0 - margin) * total);
    let mut points = vec![snap(x0, y0)];
    points.extend_from_slice(&long.points[i0 + 1..=i1]);
    points.push(snap(x1, y1));
    points.dedup();
    if points.len() == 1 {
        points.push(points[0]);
    }
    Ok(VisualPrompt {
        kind: PromptKind::ShortScribble,
        points,
        ..long
    })
}

/// Dispatches to the generator for `kind`; `None` yields the empty prompt.
pub fn gen_prompt(kind: PromptKind, mask: &ClassMask, seed: u64) -> Result<VisualPrompt> {
    match kind {
        PromptKind::None => Ok(VisualPrompt {
            stroke_width: default_stroke_width(mask.height(), mask.width()),
            ..VisualPrompt::none()
        }),
        PromptKind::Point => gen_point(mask, seed),
        PromptKind::ShortScribble => gen_short_scribble(mask, seed),
        PromptKind::LongScribble => gen_long_scribble(mask, seed),
        PromptKind::Bbox => gen_bbox(mask, seed),
    }
}
