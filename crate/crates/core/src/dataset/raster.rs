//! Minimal 2-D rasterization over pixel centers.
//!
//! Pixel (row `y`, column `x`) is sampled at the point `(x, y)`, the same frame
//! keypoints are expressed in.

use super::Resolution;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// All points within `radius` of the segment `a`–`b`.
    Capsule { a: [f32; 2], b: [f32; 2], radius: f32 },
    /// Simple polygon, even-odd rule.
    Polygon(Vec<[f32; 2]>),
    Ellipse { center: [f32; 2], rx: f32, ry: f32 },
}

impl Shape {
    pub fn contains(&self, x: f32, y: f32) -> bool {
        match self {
            Shape::Capsule { a, b, radius } => segment_distance_sq([x, y], *a, *b) <= radius * radius,
            Shape::Polygon(pts) => {
                let mut inside = false;
                let n = pts.len();
                let mut j = n.wrapping_sub(1);
                for i in 0..n {
                    let (pi, pj) = (pts[i], pts[j]);
                    if (pi[1] > y) != (pj[1] > y) {
                        let t = (y - pi[1]) / (pj[1] - pi[1]);
                        if x < pi[0] + t * (pj[0] - pi[0]) {
                            inside = !inside;
                        }
                    }
                    j = i;
                }
                inside
            }
            Shape::Ellipse { center, rx, ry } => {
                let dx = (x - center[0]) / rx;
                let dy = (y - center[1]) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }

    /// Inclusive pixel bounding box clipped to the image, or `None` when disjoint.
    pub fn pixel_bounds(&self, res: Resolution) -> Option<(usize, usize, usize, usize)> {
        let (x0, y0, x1, y1) = match self {
            Shape::Capsule { a, b, radius } => (
                a[0].min(b[0]) - radius,
                a[1].min(b[1]) - radius,
                a[0].max(b[0]) + radius,
                a[1].max(b[1]) + radius,
            ),
            Shape::Polygon(pts) => pts.iter().fold(
                (f32::INFINITY, f32::INFINITY, f32::NEG_INFINITY, f32::NEG_INFINITY),
                |(x0, y0, x1, y1), p| (x0.min(p[0]), y0.min(p[1]), x1.max(p[0]), y1.max(p[1])),
            ),
            Shape::Ellipse { center, rx, ry } => {
                (center[0] - rx, center[1] - ry, center[0] + rx, center[1] + ry)
            }
        };
        let xmax = (res.width - 1) as f32;
        let ymax = (res.height - 1) as f32;
        if !(x0 <= xmax && y0 <= ymax && x1 >= 0.0 && y1 >= 0.0) {
            return None;
        }
        Some((
            x0.max(0.0).ceil() as usize,
            y0.max(0.0).ceil() as usize,
            x1.min(xmax).floor() as usize,
            y1.min(ymax).floor() as usize,
        ))
    }

    /// Calls `f(y, x)` for every covered pixel.
    pub fn for_each_pixel(&self, res: Resolution, mut f: impl FnMut(usize, usize)) {
        let Some((x0, y0, x1, y1)) = self.pixel_bounds(res) else { return };
        for y in y0..=y1 {
            for x in x0..=x1 {
                if self.contains(x as f32, y as f32) {
                    f(y, x);
                }
            }
        }
    }
}

fn segment_distance_sq(p: [f32; 2], a: [f32; 2], b: [f32; 2]) -> f32 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let dx = ap[0] - t * ab[0];
    let dy = ap[1] - t * ab[1];
    dx * dx + dy * dy
}

/// Square (Chebyshev) dilation of a binary mask.
pub fn dilate(mask: &[bool], res: Resolution, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let (h, w) = (res.height, res.width);
    // Separable: rows then columns.
    let mut rows = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            rows[y * w + x] = mask[y * w + lo..=y * w + hi].iter().any(|&v| v);
        }
    }
    let mut out = vec![false; h * w];
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
        }
    }
    out
}
