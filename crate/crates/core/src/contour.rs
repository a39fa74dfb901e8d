//! Outer-boundary tracing of dissection-zone components.

use crate::data::ClassMask;
use crate::prompt::{components, Point};

/// Clockwise on screen (y down), starting west.
const DIRS: [(i64, i64); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn dir_index(dx: i64, dy: i64) -> usize {
    DIRS.iter()
        .position(|&d| d == (dx, dy))
        .expect("neighbouring pixels")
}

/// Closed outer contour of every 8-connected dissection-zone component,
/// in component order (by first pixel in row-major order). Each contour
/// lists boundary pixels once, in clockwise order, without repeating the
/// start.
pub fn extract_contours(mask: &ClassMask) -> Vec<Vec<Point>> {
    let (w, h) = (mask.width(), mask.height());
    let zone: Vec<bool> = mask.labels().iter().map(|&l| l == crate::data::DISSECTION).collect();
    let (labels, sizes) = components(&zone, w, h);
    let mut starts = vec![None; sizes.len()];
    for (i, &l) in labels.iter().enumerate() {
        if l != usize::MAX {
            starts[l].get_or_insert(i);
        }
    }
    starts
        .into_iter()
        .enumerate()
        .map(|(label, start)| {
            let start = start.expect("component has pixels");
            let inside = |x: i64, y: i64| {
                x >= 0
                    && y >= 0
                    && (x as usize) < w
                    && (y as usize) < h
                    && labels[y as usize * w + x as usize] == label
            };
            trace(Point::from_xy(start % w, start / w), inside)
        })
        .collect()
}

fn trace(start: Point, inside: impl Fn(i64, i64) -> bool) -> Vec<Point> {
    let mut contour = vec![start];
    let step = |cur: Point, back: usize| -> Option<(Point, usize)> {
        for i in 1..=8 {
            let d = (back + i) % 8;
            let (nx, ny) = (cur.0 + DIRS[d].0, cur.1 + DIRS[d].1);
            if inside(nx, ny) {
                let b = (back + i - 1) % 8;
                let (bx, by) = (cur.0 + DIRS[b].0, cur.1 + DIRS[b].1);
                return Some((Point(nx, ny), dir_index(bx - nx, by - ny)));
            }
        }
        None
    };
    // The raster-order first pixel always has background to its west.
    let Some((first, mut back)) = step(start, 0) else {
        return contour;
    };
    let mut cur = first;
    loop {
        if cur == start {
            let (next, b) = step(cur, back).expect("start has a neighbour");
            if next == first {
                break;
            }
            contour.push(cur);
            cur = next;
            back = b;
            continue;
        }
        contour.push(cur);
        let (next, b) = step(cur, back).expect("traced pixel has a neighbour");
        cur = next;
        back = b;
    }
    contour
}

/// Rasterizes closed contours and fills everything the outside cannot
/// reach through 4-connected steps.
pub fn fill_contours(contours: &[Vec<Point>], height: usize, width: usize) -> ClassMask {
    let mut wall = vec![false; height * width];
    for c in contours {
        for p in c {
            wall[p.1 as usize * width + p.0 as usize] = true;
        }
    }
    let mut outside = vec![false; height * width];
    let mut stack = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if (x == 0 || y == 0 || x + 1 == width || y + 1 == height) && !wall[y * width + x] {
                outside[y * width + x] = true;
                stack.push((x, y));
            }
        }
    }
    while let Some((x, y)) = stack.pop() {
        let mut visit = |nx: usize, ny: usize| {
            let i = ny * width + nx;
            if !wall[i] && !outside[i] {
                outside[i] = true;
                stack.push((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < width {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < height {
            visit(x, y + 1);
        }
    }
    ClassMask::from_fn(height, width, |x, y| !outside[y * width + x])
}
