use super::{Point, PromptKind, VisualPrompt};
use crate::data::ImageTensor;
use crate::error::Result;

fn segment_dist_sq(px: f64, py: f64, a: Point, b: Point) -> f64 {
    let (ax, ay, bx, by) = (a.0 as f64, a.1 as f64, b.0 as f64, b.1 as f64);
    let (dx, dy) = (bx - ax, by - ay);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    (px - cx).powi(2) + (py - cy).powi(2)
}

/// Pixels painted by a prompt on a `height x width` frame, row-major.
///
/// * point: filled disk of radius `2 * stroke_width`;
/// * scribbles: pixels whose centre lies within `stroke_width / 2` of the polyline;
/// * bbox: rectangle outline `stroke_width` pixels thick, drawn inward.
pub fn stroke_coverage(prompt: &VisualPrompt, height: usize, width: usize) -> Result<Vec<bool>> {
    prompt.validate()?;
    prompt.check_bounds(height, width)?;
    let mut cov = vec![false; height * width];
    let w = f64::from(prompt.stroke_width);
    let mut paint_near = |pts: &[Point], radius: f64| {
        let r_sq = radius * radius;
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let pad = radius.ceil() as i64;
            let x0 = (a.0.min(b.0) - pad).max(0) as usize;
            let x1 = ((a.0.max(b.0) + pad) as usize).min(width - 1);
            let y0 = (a.1.min(b.1) - pad).max(0) as usize;
            let y1 = ((a.1.max(b.1) + pad) as usize).min(height - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if segment_dist_sq(x as f64, y as f64, a, b) <= r_sq {
                        cov[y * width + x] = true;
                    }
                }
            }
        }
    };
    match prompt.kind {
        PromptKind::None => {}
        PromptKind::Point => {
            let p = prompt.points[0];
            paint_near(&[p, p], 2.0 * w);
        }
        PromptKind::ShortScribble | PromptKind::LongScribble => {
            paint_near(&prompt.points, w / 2.0);
        }
        PromptKind::Bbox => {
            let (a, b) = (prompt.points[0], prompt.points[1]);
            let (x0, x1) = (a.0.min(b.0), a.0.max(b.0));
            let (y0, y1) = (a.1.min(b.1), a.1.max(b.1));
            let t = i64::from(prompt.stroke_width);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if x < x0 + t || x > x1 - t || y < y0 + t || y > y1 - t {
                        cov[y as usize * width + x as usize] = true;
                    }
                }
            }
        }
    }
    Ok(cov)
}

/// Copy of `image` with the prompt painted in its colour.
pub fn render_prompt_overlay(image: &ImageTensor, prompt: &VisualPrompt) -> Result<ImageTensor> {
    let cov = stroke_coverage(prompt, image.height(), image.width())?;
    let mut out = image.clone();
    let rgb = prompt.color.map(|c| f32::from(c) / 255.0);
    let width = image.width();
    for (i, _) in cov.iter().enumerate().filter(|(_, &c)| c) {
        out.set_pixel(i % width, i / width, rgb);
    }
    Ok(out)
}
