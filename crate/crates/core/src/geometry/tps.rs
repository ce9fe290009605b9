//! Thin-plate-spline warps driven by a 5×5 anchor lattice.
//!
//! Coordinates are normalized to `[-1, 1]` with corner-aligned pixels: column
//! `j` of a `W`-wide image sits at `x = -1 + 2j/(W-1)`. A sampling grid stores,
//! for every output pixel, the source location to read from.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Resolution;
use crate::error::{Error, Result};

pub const LATTICE: usize = 5;
pub const NUM_ANCHORS: usize = LATTICE * LATTICE;
pub const NUM_PARAMS: usize = 2 * NUM_ANCHORS;
/// Ridge added to the radial block of the interpolation system.
pub const TPS_RIDGE: f64 = 1e-6;
/// Sample positions within this many pixels of a pixel center snap onto it.
pub const SNAP_EPS: f64 = 1e-4;

/// Anchor offsets, laid out `[coordinate][row][column]`: the 25 x offsets
/// followed by the 25 y offsets. All zeros is the identity warp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpsParams {
    pub offsets: [f32; NUM_PARAMS],
}

impl Default for TpsParams {
    fn default() -> Self {
        Self::zero()
    }
}

impl TpsParams {
    pub fn zero() -> Self {
        Self { offsets: [0.0; NUM_PARAMS] }
    }

    pub fn from_slice(values: &[f32]) -> Result<Self> {
        let offsets: [f32; NUM_PARAMS] = values
            .try_into()
            .map_err(|_| Error::Shape(format!("TPS parameters need {NUM_PARAMS} values, got {}", values.len())))?;
        Ok(Self { offsets })
    }

    pub fn dx(&self, row: usize, col: usize) -> f32 {
        self.offsets[row * LATTICE + col]
    }

    pub fn dy(&self, row: usize, col: usize) -> f32 {
        self.offsets[NUM_ANCHORS + row * LATTICE + col]
    }

    pub fn set(&mut self, row: usize, col: usize, dx: f32, dy: f32) {
        self.offsets[row * LATTICE + col] = dx;
        self.offsets[NUM_ANCHORS + row * LATTICE + col] = dy;
    }

    /// Offsets that move every anchor `a` to `affine(a)`.
    pub fn from_affine(affine: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let mut p = Self::zero();
        for (i, a) in anchor_lattice().iter().enumerate() {
            let t = affine(*a);
            p.offsets[i] = (t[0] - a[0]) as f32;
            p.offsets[NUM_ANCHORS + i] = (t[1] - a[1]) as f32;
        }
        p
    }

    /// Whitespace-separated 50-number text record.
    pub fn to_text(&self) -> String {
        self.offsets.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let values = text
            .split_whitespace()
            .map(|t| t.parse::<f32>().map_err(|e| Error::Argument(format!("bad TPS value `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_slice(&values)
    }

    /// Target position of every anchor.
    pub fn targets(&self) -> Vec<[f64; 2]> {
        anchor_lattice()
            .iter()
            .enumerate()
            .map(|(i, a)| [a[0] + self.offsets[i] as f64, a[1] + self.offsets[NUM_ANCHORS + i] as f64])
            .collect()
    }
}

/// Uniform 5×5 lattice over `[-1, 1]²`, row-major (`y` outer, `x` inner).
pub fn anchor_lattice() -> Vec<[f64; 2]> {
    let step = 2.0 / (LATTICE - 1) as f64;
    (0..LATTICE)
        .flat_map(|r| (0..LATTICE).map(move |c| [-1.0 + c as f64 * step, -1.0 + r as f64 * step]))
        .collect()
}

/// Radial basis `r² log r²`.
fn radial(d2: f64) -> f64 {
    if d2 <= 0.0 {
        0.0
    } else {
        d2 * d2.ln()
    }
}

/// Precomputed TPS solve for a fixed anchor set.
///
/// Interpolation through the anchors is linear in the target positions, so a
/// warped point is `basis(x) · targets` for a 25-vector `basis(x)`.
#[derive(Debug, Clone)]
pub struct TpsBasis {
    anchors: Vec<[f64; 2]>,
    /// Columns 0..n of the inverse system matrix, (n + 3) × n.
    inverse: DMatrix<f64>,
}

impl TpsBasis {
    pub fn new() -> Self {
        Self::with_anchors(&anchor_lattice()).expect("the regular lattice is non-degenerate")
    }

    pub fn with_anchors(anchors: &[[f64; 2]]) -> Result<Self> {
        let n = anchors.len();
        let singular = || Error::SingularSystem { theta: anchors.iter().flat_map(|a| *a).collect() };
        // The affine block must have full column rank.
        let affine = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => anchors[i][0],
            _ => anchors[i][1],
        });
        let sv = affine.clone().svd(false, false).singular_values;
        if sv.min() <= 1e-9 * sv.max() {
            return Err(singular());
        }
        let mut system = DMatrix::zeros(n + 3, n + 3);
        for i in 0..n {
            for j in 0..n {
                let d = [anchors[i][0] - anchors[j][0], anchors[i][1] - anchors[j][1]];
                system[(i, j)] = radial(d[0] * d[0] + d[1] * d[1]);
            }
            system[(i, i)] += TPS_RIDGE;
            for j in 0..3 {
                system[(i, n + j)] = affine[(i, j)];
                system[(n + j, i)] = affine[(i, j)];
            }
        }
        let lu = system.lu();
        let mut inverse = DMatrix::zeros(n + 3, n);
        for k in 0..n {
            let mut e = DVector::zeros(n + 3);
            e[k] = 1.0;
            let col = lu.solve(&e).ok_or_else(singular)?;
            if col.iter().any(|v| !v.is_finite()) {
                return Err(singular());
            }
            inverse.set_column(k, &col);
        }
        Ok(Self { anchors: anchors.to_vec(), inverse })
    }

    pub fn anchors(&self) -> &[[f64; 2]] {
        &self.anchors
    }

    /// Interpolation weights of the anchors' targets at `(x, y)`.
    pub fn weights_at(&self, x: f64, y: f64) -> Vec<f64> {
        let n = self.anchors.len();
        let mut phi = DVector::zeros(n + 3);
        for (i, a) in self.anchors.iter().enumerate() {
            let d = [x - a[0], y - a[1]];
            phi[i] = radial(d[0] * d[0] + d[1] * d[1]);
        }
        phi[n] = 1.0;
        phi[n + 1] = x;
        phi[n + 2] = y;
        (self.inverse.transpose() * phi).iter().copied().collect()
    }

    /// Row-major `(H·W) × n` matrix of interpolation weights.
    pub fn weight_matrix(&self, res: Resolution) -> Vec<f64> {
        let mut out = Vec::with_capacity(res.pixels() * self.anchors.len());
        for i in 0..res.height {
            for j in 0..res.width {
                let (x, y) = normalized(j, i, res);
                out.extend(self.weights_at(x, y));
            }
        }
        out
    }

    /// Image of `(x, y)` under the spline through `targets`.
    pub fn map_point(&self, targets: &[[f64; 2]], x: f64, y: f64) -> [f64; 2] {
        let w = self.weights_at(x, y);
        w.iter().zip(targets).fold([0.0, 0.0], |acc, (wi, t)| [acc[0] + wi * t[0], acc[1] + wi * t[1]])
    }
}

impl Default for TpsBasis {
    fn default() -> Self {
        Self::new()
    }
}

/// Normalized coordinate of pixel `(row, col)`.
pub fn normalized(col: usize, row: usize, res: Resolution) -> (f64, f64) {
    let nx = if res.width > 1 { -1.0 + 2.0 * col as f64 / (res.width - 1) as f64 } else { 0.0 };
    let ny = if res.height > 1 { -1.0 + 2.0 * row as f64 / (res.height - 1) as f64 } else { 0.0 };
    (nx, ny)
}

/// H×W×2 sampling grid of normalized source coordinates `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl SamplingGrid {
    pub fn identity(res: Resolution) -> Self {
        let mut data = Vec::with_capacity(res.pixels() * 2);
        for i in 0..res.height {
            for j in 0..res.width {
                let (x, y) = normalized(j, i, res);
                data.push(x as f32);
                data.push(y as f32);
            }
        }
        Self { height: res.height, width: res.width, data }
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.height, self.width)
    }

    pub fn at(&self, row: usize, col: usize) -> [f32; 2] {
        let i = 2 * (row * self.width + col);
        [self.data[i], self.data[i + 1]]
    }
}

/// Sampling grid of the spline that moves each anchor by its offset.
///
/// Built as `identity + weights · θ`, which equals `weights · (anchors + θ)`
/// because the spline reproduces affine maps exactly.
pub fn tps_grid(params: &TpsParams, res: Resolution) -> Result<SamplingGrid> {
    tps_grid_with(&TpsBasis::new(), params, res)
}

pub fn tps_grid_with(basis: &TpsBasis, params: &TpsParams, res: Resolution) -> Result<SamplingGrid> {
    if params.offsets.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem { theta: params.offsets.iter().map(|&v| v as f64).collect() });
    }
    let mut grid = SamplingGrid::identity(res);
    if params.offsets.iter().all(|&v| v == 0.0) {
        return Ok(grid);
    }
    for i in 0..res.height {
        for j in 0..res.width {
            let (x, y) = normalized(j, i, res);
            let w = basis.weights_at(x, y);
            let (mut dx, mut dy) = (0.0, 0.0);
            for (k, wk) in w.iter().enumerate() {
                dx += wk * params.offsets[k] as f64;
                dy += wk * params.offsets[NUM_ANCHORS + k] as f64;
            }
            let o = 2 * (i * res.width + j);
            grid.data[o] = (x + dx) as f32;
            grid.data[o + 1] = (y + dy) as f32;
        }
    }
    Ok(grid)
}

/// Sum of squared second differences of the target lattice along every row
/// and column, both coordinates. Zero iff each lattice line is affine.
pub fn second_order_constraint(params: &TpsParams) -> f64 {
    let t = params.targets();
    let at = |r: usize, c: usize| t[r * LATTICE + c];
    let mut total = 0.0;
    for r in 0..LATTICE {
        for c in 1..LATTICE - 1 {
            for k in 0..2 {
                let row = 2.0 * at(r, c)[k] - at(r, c - 1)[k] - at(r, c + 1)[k];
                let col = 2.0 * at(c, r)[k] - at(c - 1, r)[k] - at(c + 1, r)[k];
                total += row * row + col * col;
            }
        }
    }
    total
}

/// Pixel coordinate for a normalized one, snapped onto nearby pixel centers.
pub fn to_pixel(v: f64, size: usize) -> f64 {
    let p = (v + 1.0) * 0.5 * (size as f64 - 1.0);
    let r = p.round();
    if (p - r).abs() < SNAP_EPS {
        r
    } else {
        p
    }
}

/// Bilinear resampling of a channel-major image with zero padding.
pub fn sample_bilinear(chw: &[f32], channels: usize, src: Resolution, grid: &SamplingGrid) -> Vec<f32> {
    let (h, w) = (src.height, src.width);
    let n_out = grid.height * grid.width;
    let mut out = vec![0.0; channels * n_out];
    for p in 0..n_out {
        let px = to_pixel(grid.data[2 * p] as f64, w);
        let py = to_pixel(grid.data[2 * p + 1] as f64, h);
        let (x0, y0) = (px.floor(), py.floor());
        let (fx, fy) = (px - x0, py - y0);
        let corners = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1.0, y0, fx * (1.0 - fy)),
            (x0, y0 + 1.0, (1.0 - fx) * fy),
            (x0 + 1.0, y0 + 1.0, fx * fy),
        ];
        for (cx, cy, wt) in corners {
            if wt == 0.0 || cx < 0.0 || cy < 0.0 || cx >= w as f64 || cy >= h as f64 {
                continue;
            }
            let idx = cy as usize * w + cx as usize;
            for c in 0..channels {
                out[c * n_out + p] += (wt * chw[c * h * w + idx] as f64) as f32;
            }
        }
    }
    out
}
