//! Binary morphology on row-major `bool` grids: connected components, exact
//! Euclidean distance transform, Zhang-Suen thinning and skeleton diameter.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

const NEIGHBORS8: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// 8-connected components, labelled in row-major discovery order. Returns
/// per-pixel labels (`usize::MAX` for background) and component sizes.
pub fn components(region: &[bool], width: usize, height: usize) -> (Vec<usize>, Vec<usize>) {
    let mut labels = vec![usize::MAX; region.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..region.len() {
        if !region[start] || labels[start] != usize::MAX {
            continue;
        }
        let label = sizes.len();
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i % width) as i64, (i / width) as i64);
            for (dx, dy) in NEIGHBORS8 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                    continue;
                }
                let j = ny as usize * width + nx as usize;
                if region[j] && labels[j] == usize::MAX {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// The largest 8-connected component; ties go to the one found first in
/// row-major order. `None` when the region is empty.
pub fn largest_component(region: &[bool], width: usize, height: usize) -> Option<Vec<bool>> {
    let (labels, sizes) = components(region, width, height);
    let best = sizes
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, usize)>, (l, &s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((l, s)),
        })?
        .0;
    Some(labels.iter().map(|&l| l == best).collect())
}

/// Squared Euclidean distance from each pixel to the nearest pixel outside
/// `region`; pixels beyond the image border count as outside. Background
/// pixels get 0.
pub fn distance_transform_sq(region: &[bool], width: usize, height: usize) -> Vec<f64> {
    // Pad by one background pixel on each side so the border acts as background.
    let (pw, ph) = (width + 2, height + 2);
    let inf = 1e20;
    let mut grid = vec![0.0f64; pw * ph];
    for y in 0..height {
        for x in 0..width {
            if region[y * width + x] {
                grid[(y + 1) * pw + x + 1] = inf;
            }
        }
    }
    let mut buf = vec![0.0; pw.max(ph)];
    for x in 0..pw {
        let col: Vec<f64> = (0..ph).map(|y| grid[y * pw + x]).collect();
        edt_1d(&col, &mut buf[..ph]);
        for y in 0..ph {
            grid[y * pw + x] = buf[y];
        }
    }
    for y in 0..ph {
        let row = grid[y * pw..(y + 1) * pw].to_vec();
        edt_1d(&row, &mut buf[..pw]);
        grid[y * pw..(y + 1) * pw].copy_from_slice(&buf[..pw]);
    }
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        out.extend_from_slice(&grid[(y + 1) * pw + 1..(y + 1) * pw + 1 + width]);
    }
    out
}

/// Felzenszwalb-Huttenlocher lower envelope of parabolas.
fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere.
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        *out = (q as f64 - p as f64).powi(2) + f[p];
    }
}

/// Zhang-Suen thinning. The result is a subset of `region`; it may be empty
/// for regions no thicker than two pixels in every direction.
pub fn thin(region: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut img = region.to_vec();
    let at = |img: &[bool], x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && x < width as i64 && y < height as i64 && img[y as usize * width + x as usize]
    };
    let mut to_clear = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            to_clear.clear();
            for y in 0..height as i64 {
                for x in 0..width as i64 {
                    if !at(&img, x, y) {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    let p = [
                        at(&img, x, y - 1),
                        at(&img, x + 1, y - 1),
                        at(&img, x + 1, y),
                        at(&img, x + 1, y + 1),
                        at(&img, x, y + 1),
                        at(&img, x - 1, y + 1),
                        at(&img, x - 1, y),
                        at(&img, x - 1, y - 1),
                    ];
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (n, e, s, w) = (p[0], p[2], p[4], p[6]);
                    let ok = if pass == 0 {
                        !(n && e && s) && !(e && s && w)
                    } else {
                        !(n && e && w) && !(n && s && w)
                    };
                    if ok {
                        to_clear.push(y as usize * width + x as usize);
                    }
                }
            }
            for &i in &to_clear {
                img[i] = false;
            }
            changed |= !to_clear.is_empty();
        }
        if !changed {
            return img;
        }
    }
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    // Min-heap on distance, then on node index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], src: usize) -> (Vec<f64>, Vec<usize>) {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(Item(0.0, src));
    while let Some(Item(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                prev[v] = u;
                heap.push(Item(nd, v));
            }
        }
    }
    (dist, prev)
}

fn farthest(dist: &[f64]) -> (usize, f64) {
    dist.iter()
        .enumerate()
        .filter(|(_, d)| d.is_finite())
        .fold((0, f64::NEG_INFINITY), |best, (i, &d)| {
            if d > best.1 {
                (i, d)
            } else {
                best
            }
        })
}

/// Above this many skeleton pixels the diameter uses a double sweep instead
/// of all-pairs search; the two agree on trees.
const EXACT_DIAMETER_LIMIT: usize = 1024;

/// Longest shortest path through the largest 8-connected component of a
/// skeleton, with unit/diagonal edge costs. Returns pixel coordinates
/// `(x, y)` from one end to the other; empty when `skeleton` is empty.
pub fn skeleton_diameter_path(skeleton: &[bool], width: usize, height: usize) -> Vec<(usize, usize)> {
    let Some(comp) = largest_component(skeleton, width, height) else {
        return Vec::new();
    };
    let nodes: Vec<usize> = (0..comp.len()).filter(|&i| comp[i]).collect();
    let mut index = vec![usize::MAX; comp.len()];
    for (k, &i) in nodes.iter().enumerate() {
        index[i] = k;
    }
    let adj: Vec<Vec<(usize, f64)>> = nodes
        .iter()
        .map(|&i| {
            let (x, y) = ((i % width) as i64, (i / width) as i64);
            NEIGHBORS8
                .iter()
                .filter_map(|&(dx, dy)| {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        return None;
                    }
                    let j = index[ny as usize * width + nx as usize];
                    (j != usize::MAX).then(|| (j, if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 }))
                })
                .collect()
        })
        .collect();

    let (src, dst, prev) = if nodes.len() <= EXACT_DIAMETER_LIMIT {
        let mut best = (0, 0, f64::NEG_INFINITY, Vec::new());
        for s in 0..nodes.len() {
            let (dist, prev) = dijkstra(&adj, s);
            let (t, d) = farthest(&dist);
            if d > best.2 {
                best = (s, t, d, prev);
            }
        }
        (best.0, best.1, best.3)
    } else {
        let (d0, _) = dijkstra(&adj, 0);
        let (u, _) = farthest(&d0);
        let (du, prev) = dijkstra(&adj, u);
        let (v, _) = farthest(&du);
        (u, v, prev)
    };

    let mut path = vec![dst];
    let mut cur = dst;
    while cur != src {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    path.into_iter()
        .map(|k| (nodes[k] % width, nodes[k] / width))
        .collect()
}
