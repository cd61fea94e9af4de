//! Simple Linear Iterative Clustering in joint (RGB, x, y) space.

use std::collections::VecDeque;

use super::Frame;
use crate::error::{Error, Result};

/// Per-pixel segment labels in `[0, segment_count)`, each segment a single
/// 4-connected region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segmentation {
    width: usize,
    height: usize,
    labels: Vec<usize>,
    segment_count: usize,
}

impl Segmentation {
    /// Wrap raw labels, relabelling them to `[0, k)` in raster order of first
    /// appearance. Fails if any label is not 4-connected.
    pub fn from_labels(width: usize, height: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::contract(format!(
                "{width}x{height} segmentation needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        let seg = relabel(width, height, &labels);
        if components(width, height, &seg.labels).1 != seg.segment_count {
            return Err(Error::contract("segments must be 4-connected"));
        }
        Ok(seg)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn segment_count(&self) -> usize {
        self.segment_count
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x]
    }

    pub fn pixel_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.segment_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Mean pixel position (x, y) of every segment.
    pub fn centroids(&self) -> Vec<(f64, f64)> {
        let mut acc = vec![(0.0, 0.0, 0usize); self.segment_count];
        for y in 0..self.height {
            for x in 0..self.width {
                let a = &mut acc[self.label(x, y)];
                a.0 += x as f64;
                a.1 += y as f64;
                a.2 += 1;
            }
        }
        acc.into_iter()
            .map(|(sx, sy, n)| (sx / n as f64, sy / n as f64))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlicParams {
    pub n_segments: usize,
    pub compactness: f64,
    pub max_iters: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            n_segments: 64,
            compactness: 10.0,
            max_iters: 10,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Center {
    color: [f64; 3],
    x: f64,
    y: f64,
}

/// Choose an `nx * ny <= n` seed grid whose cells are as square as possible.
fn grid_shape(width: usize, height: usize, n: usize) -> (usize, usize) {
    let step = ((width * height) as f64 / n as f64).sqrt();
    let mut nx = ((width as f64 / step).round() as usize).clamp(1, width);
    let mut ny = ((height as f64 / step).round() as usize).clamp(1, height);
    while nx * ny > n {
        if width as f64 / nx as f64 <= height as f64 / ny as f64 && nx > 1 {
            nx -= 1;
        } else if ny > 1 {
            ny -= 1;
        } else {
            nx -= 1;
        }
    }
    (nx, ny)
}

fn gradient_magnitude(frame: &Frame, x: usize, y: usize) -> f64 {
    let (xi, yi) = (x as isize, y as isize);
    (0..3)
        .map(|c| {
            let dx = frame.clamped(xi + 1, yi, c) - frame.clamped(xi - 1, yi, c);
            let dy = frame.clamped(xi, yi + 1, c) - frame.clamped(xi, yi - 1, c);
            dx * dx + dy * dy
        })
        .sum()
}

/// Cluster `frame` into at most `params.n_segments` connected superpixels.
///
/// Distance is `sqrt(d_color^2 + (compactness * d_xy / S)^2)` with
/// `S = sqrt(width * height / n_segments)`. Seeds sit on a regular grid and
/// move to the lowest-gradient pixel of their 3x3 neighbourhood. After the
/// k-means iterations every disconnected fragment of a label is merged into
/// the adjacent segment it shares the longest border with.
pub fn slic(frame: &Frame, params: &SlicParams) -> Result<Segmentation> {
    let (w, h) = (frame.width(), frame.height());
    if params.n_segments == 0 || params.n_segments > w * h {
        return Err(Error::contract(format!(
            "n_segments must be in [1, {}], got {}",
            w * h,
            params.n_segments
        )));
    }
    if !(params.compactness > 0.0) {
        return Err(Error::contract(format!(
            "compactness must be positive, got {}",
            params.compactness
        )));
    }
    let step = ((w * h) as f64 / params.n_segments as f64).sqrt();
    let (nx, ny) = grid_shape(w, h, params.n_segments);

    let mut taken = vec![false; w * h];
    let mut centers = Vec::with_capacity(nx * ny);
    for gy in 0..ny {
        for gx in 0..nx {
            let px = (((gx as f64 + 0.5) * w as f64 / nx as f64) as usize).min(w - 1);
            let py = (((gy as f64 + 0.5) * h as f64 / ny as f64) as usize).min(h - 1);
            let mut best = (px, py);
            let mut best_g = gradient_magnitude(frame, px, py);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (qx, qy) = (px as isize + dx, py as isize + dy);
                    if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                        continue;
                    }
                    let (qx, qy) = (qx as usize, qy as usize);
                    if taken[qy * w + qx] {
                        continue;
                    }
                    let g = gradient_magnitude(frame, qx, qy);
                    if g < best_g {
                        best = (qx, qy);
                        best_g = g;
                    }
                }
            }
            if taken[best.1 * w + best.0] {
                // Original grid pixel already used by a perturbed neighbour.
                continue;
            }
            taken[best.1 * w + best.0] = true;
            centers.push(Center {
                color: frame.pixel(best.0, best.1),
                x: best.0 as f64 + 0.5,
                y: best.1 as f64 + 0.5,
            });
        }
    }

    let spatial_weight = params.compactness / step;
    let window = (2.0 * step).ceil() as isize;
    let mut labels = vec![usize::MAX; w * h];
    let mut dist = vec![f64::INFINITY; w * h];
    for _ in 0..params.max_iters.max(1) {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        let mut new_labels = vec![usize::MAX; w * h];
        for (k, c) in centers.iter().enumerate() {
            let (cx, cy) = (c.x.floor() as isize, c.y.floor() as isize);
            let y0 = (cy - window).max(0) as usize;
            let y1 = ((cy + window) as usize).min(h - 1);
            let x0 = (cx - window).max(0) as usize;
            let x1 = ((cx + window) as usize).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = frame.pixel(x, y);
                    let dc2: f64 = (0..3).map(|i| (p[i] - c.color[i]).powi(2)).sum();
                    let ds2 = (x as f64 + 0.5 - c.x).powi(2) + (y as f64 + 0.5 - c.y).powi(2);
                    let d = (dc2 + spatial_weight * spatial_weight * ds2).sqrt();
                    let i = y * w + x;
                    if d < dist[i] {
                        dist[i] = d;
                        new_labels[i] = k;
                    }
                }
            }
        }
        // Pixels outside every window join the spatially nearest center.
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if new_labels[i] == usize::MAX {
                    new_labels[i] = nearest_center(&centers, x, y);
                }
            }
        }
        let converged = new_labels == labels;
        labels = new_labels;
        if converged {
            break;
        }
        let mut acc = vec![([0.0; 3], 0.0, 0.0, 0usize); centers.len()];
        for y in 0..h {
            for x in 0..w {
                let a = &mut acc[labels[y * w + x]];
                let p = frame.pixel(x, y);
                for i in 0..3 {
                    a.0[i] += p[i];
                }
                a.1 += x as f64 + 0.5;
                a.2 += y as f64 + 0.5;
                a.3 += 1;
            }
        }
        for (c, a) in centers.iter_mut().zip(acc) {
            if a.3 > 0 {
                let n = a.3 as f64;
                c.color = [a.0[0] / n, a.0[1] / n, a.0[2] / n];
                c.x = a.1 / n;
                c.y = a.2 / n;
            }
        }
    }

    let labels = enforce_connectivity(w, h, labels);
    Ok(relabel(w, h, &labels))
}

fn nearest_center(centers: &[Center], x: usize, y: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centers.iter().enumerate() {
        let d = (x as f64 + 0.5 - c.x).powi(2) + (y as f64 + 0.5 - c.y).powi(2);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// 4-connected components: (component id per pixel, component count).
fn components(w: usize, h: usize, labels: &[usize]) -> (Vec<usize>, usize) {
    let mut comp = vec![usize::MAX; w * h];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = count;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == labels[i] {
                    comp[j] = count;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        count += 1;
    }
    (comp, count)
}

/// Keep the largest fragment of each label; fold the others into the
/// neighbouring kept region with the longest shared border.
fn enforce_connectivity(w: usize, h: usize, mut labels: Vec<usize>) -> Vec<usize> {
    loop {
        let (comp, count) = components(w, h, &labels);
        let mut size = vec![0usize; count];
        let mut comp_label = vec![0usize; count];
        for (i, &c) in comp.iter().enumerate() {
            size[c] += 1;
            comp_label[c] = labels[i];
        }
        let max_label = labels.iter().copied().max().unwrap_or(0);
        let mut keeper = vec![usize::MAX; max_label + 1];
        for c in 0..count {
            let l = comp_label[c];
            if keeper[l] == usize::MAX || size[c] > size[keeper[l]] {
                keeper[l] = c;
            }
        }
        let orphan = |c: usize| keeper[comp_label[c]] != c;
        if !(0..count).any(orphan) {
            return labels;
        }
        // border[c] maps neighbouring kept component -> shared edge count
        let mut border: Vec<Vec<(usize, usize)>> = vec![Vec::new(); count];
        let mut note = |a: usize, b: usize| {
            if orphan(a) && !orphan(b) {
                match border[a].iter_mut().find(|e| e.0 == b) {
                    Some(e) => e.1 += 1,
                    None => border[a].push((b, 1)),
                }
            }
        };
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w && comp[i] != comp[i + 1] {
                    note(comp[i], comp[i + 1]);
                    note(comp[i + 1], comp[i]);
                }
                if y + 1 < h && comp[i] != comp[i + w] {
                    note(comp[i], comp[i + w]);
                    note(comp[i + w], comp[i]);
                }
            }
        }
        let mut target = vec![None; count];
        for c in 0..count {
            if let Some(&(dest, _)) = border[c]
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(comp_label[b.0].cmp(&comp_label[a.0])))
            {
                target[c] = Some(comp_label[dest]);
            }
        }
        let mut changed = false;
        for (i, &c) in comp.iter().enumerate() {
            if let Some(l) = target[c] {
                labels[i] = l;
                changed = true;
            }
        }
        if !changed {
            // Orphans surrounded only by other orphans: promote the biggest.
            let c = (0..count)
                .filter(|&c| orphan(c))
                .max_by_key(|&c| size[c])
                .expect("orphan exists");
            let fresh = max_label + 1;
            for (i, &ci) in comp.iter().enumerate() {
                if ci == c {
                    labels[i] = fresh;
                }
            }
        }
    }
}

fn relabel(w: usize, h: usize, labels: &[usize]) -> Segmentation {
    let max = labels.iter().copied().max().unwrap_or(0);
    let mut map = vec![usize::MAX; max + 1];
    let mut next = 0;
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
        out.push(map[l]);
    }
    Segmentation {
        width: w,
        height: h,
        labels: out,
        segment_count: next,
    }
}
