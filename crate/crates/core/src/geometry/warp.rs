//! Differentiable TPS grids and bilinear sampling on batched tensors.

use std::cell::RefCell;
use std::collections::HashMap;

use candle_core::{DType, Device, Tensor};

use super::tps::{normalized, TpsBasis, NUM_ANCHORS, NUM_PARAMS, SNAP_EPS};
use crate::dataset::Resolution;
use crate::error::{Error, Result};

/// Normalized source coordinates for every output pixel, each (B, H·W).
#[derive(Debug, Clone)]
pub struct GridTensor {
    pub x: Tensor,
    pub y: Tensor,
    pub resolution: Resolution,
}

/// Builds TPS sampling grids from batched offsets, caching the interpolation
/// weights per output resolution.
pub struct TpsWarper {
    basis: TpsBasis,
    cache: RefCell<HashMap<(usize, usize, DType), (Tensor, Tensor, Tensor)>>,
}

impl Default for TpsWarper {
    fn default() -> Self {
        Self::new()
    }
}

impl TpsWarper {
    pub fn new() -> Self {
        Self { basis: TpsBasis::new(), cache: RefCell::new(HashMap::new()) }
    }

    fn tables(&self, res: Resolution, dtype: DType) -> Result<(Tensor, Tensor, Tensor)> {
        let key = (res.height, res.width, dtype);
        if let Some(t) = self.cache.borrow().get(&key) {
            return Ok(t.clone());
        }
        let n = res.pixels();
        let weights = self.basis.weight_matrix(res);
        // (25, H·W) so that θ (B, 25) · W gives (B, H·W).
        let weights = Tensor::from_vec(weights, (n, NUM_ANCHORS), &Device::Cpu)?.t()?.contiguous()?.to_dtype(dtype)?;
        let (mut bx, mut by) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..res.height {
            for j in 0..res.width {
                let (x, y) = normalized(j, i, res);
                bx.push(x as f32);
                by.push(y as f32);
            }
        }
        let bx = Tensor::from_vec(bx, (1, n), &Device::Cpu)?.to_dtype(dtype)?;
        let by = Tensor::from_vec(by, (1, n), &Device::Cpu)?.to_dtype(dtype)?;
        let t = (weights, bx, by);
        self.cache.borrow_mut().insert(key, t.clone());
        Ok(t)
    }

    /// Grid for offsets `theta` (B, 50) at `res`; linear in `theta`.
    pub fn grid(&self, theta: &Tensor, res: Resolution) -> Result<GridTensor> {
        let (_, p) = theta.dims2()?;
        if p != NUM_PARAMS {
            return Err(Error::Shape(format!("theta has {p} columns, expected {NUM_PARAMS}")));
        }
        let (w, bx, by) = self.tables(res, theta.dtype())?;
        let tx = theta.narrow(1, 0, NUM_ANCHORS)?;
        let ty = theta.narrow(1, NUM_ANCHORS, NUM_ANCHORS)?;
        let x = tx.matmul(&w)?.broadcast_add(&bx)?;
        let y = ty.matmul(&w)?.broadcast_add(&by)?;
        Ok(GridTensor { x, y, resolution: res })
    }

    /// Warps `input` (B, C, H, W) with the TPS of `theta`, output at the input size.
    pub fn warp(&self, input: &Tensor, theta: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = input.dims4()?;
        let grid = self.grid(theta, Resolution::new(h, w))?;
        grid_sample(input, &grid)
    }
}

struct Axis {
    /// Fractional offset from `lo`, exact zero on snapped positions.
    frac: Vec<f64>,
    lo: Vec<i64>,
}

fn axis(coords: &[f64], size: usize) -> Axis {
    let mut frac = Vec::with_capacity(coords.len());
    let mut lo = Vec::with_capacity(coords.len());
    for &v in coords {
        // Far-outside points sample zeros either way; clamping keeps `lo + 1` in range.
        let p = ((v + 1.0) * 0.5 * (size as f64 - 1.0)).clamp(-2.0, size as f64 + 1.0);
        let r = p.round();
        let p = if (p - r).abs() < SNAP_EPS { r } else { p };
        let f = p.floor();
        frac.push(p - f);
        lo.push(f as i64);
    }
    Axis { frac, lo }
}

/// Bilinear sampling of `input` (B, C, H, W) at `grid`, zero outside the image,
/// corner-aligned pixel centers. Differentiable in the input and the grid.
pub fn grid_sample(input: &Tensor, grid: &GridTensor) -> Result<Tensor> {
    let (b, c, h, w) = input.dims4()?;
    let out = grid.resolution;
    let n = out.pixels();
    if grid.x.dims() != [b, n] || grid.y.dims() != [b, n] {
        return Err(Error::Shape(format!("grid {:?} does not match batch {b} at {out:?}", grid.x.dims())));
    }
    let dtype = input.dtype();
    let gx = grid.x.to_dtype(dtype)?;
    let gy = grid.y.to_dtype(dtype)?;
    let xs: Vec<f64> = gx.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let ys: Vec<f64> = gy.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite sampling grid at {out:?}")));
    }
    let ax = axis(&xs, w);
    let ay = axis(&ys, h);
    let dev = Device::Cpu;
    // Value of the fraction comes from the snapped constants; the gradient
    // comes from the live grid.
    let sx = ((w as f64 - 1.0) * 0.5).max(0.0);
    let sy = ((h as f64 - 1.0) * 0.5).max(0.0);
    let live_x = ((&gx - gx.detach())? * sx)?;
    let live_y = ((&gy - gy.detach())? * sy)?;
    let fx = (live_x + Tensor::from_vec(ax.frac.clone(), (b, n), &dev)?.to_dtype(dtype)?)?;
    let fy = (live_y + Tensor::from_vec(ay.frac.clone(), (b, n), &dev)?.to_dtype(dtype)?)?;
    let flat = input.reshape((b, c, h * w))?;
    let mut acc: Option<Tensor> = None;
    for (dx, dy) in [(0i64, 0i64), (1, 0), (0, 1), (1, 1)] {
        let mut idx = Vec::with_capacity(b * n);
        let mut valid = Vec::with_capacity(b * n);
        for k in 0..b * n {
            let (x, y) = (ax.lo[k] + dx, ay.lo[k] + dy);
            let inside = x >= 0 && y >= 0 && x < w as i64 && y < h as i64;
            idx.push(if inside { (y as usize * w + x as usize) as u32 } else { 0 });
            valid.push(if inside { 1.0f32 } else { 0.0 });
        }
        if valid.iter().all(|&v| v == 0.0) {
            continue;
        }
        let wx = if dx == 0 { fx.affine(-1.0, 1.0)? } else { fx.clone() };
        let wy = if dy == 0 { fy.affine(-1.0, 1.0)? } else { fy.clone() };
        let valid = Tensor::from_vec(valid, (b, n), &dev)?.to_dtype(dtype)?;
        let weight = (wx * wy)?.mul(&valid)?.unsqueeze(1)?;
        let idx = Tensor::from_vec(idx, (b, 1, n), &dev)?.broadcast_as((b, c, n))?.contiguous()?;
        let term = flat.gather(&idx, 2)?.broadcast_mul(&weight)?;
        acc = Some(match acc {
            Some(a) => (a + term)?,
            None => term,
        });
    }
    let out_t = match acc {
        Some(a) => a,
        None => Tensor::zeros((b, c, n), dtype, &dev)?,
    };
    Ok(out_t.reshape((b, c, out.height, out.width))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tps::{sample_bilinear, tps_grid, TpsParams};
    use crate::nn::gradient_check;

    fn image(b: usize, c: usize, h: usize, w: usize, dtype: DType) -> Tensor {
        let v: Vec<f64> = (0..b * c * h * w).map(|i| ((i * 37 % 101) as f64) / 101.0).collect();
        Tensor::from_vec(v, (b, c, h, w), &Device::Cpu).unwrap().to_dtype(dtype).unwrap()
    }

    #[test]
    fn zero_theta_reproduces_input_exactly() {
        let warper = TpsWarper::new();
        let x = image(2, 3, 16, 12, DType::F32);
        let theta = Tensor::zeros((2, NUM_PARAMS), DType::F32, &Device::Cpu).unwrap();
        let y = warper.warp(&x, &theta).unwrap();
        let a: Vec<f32> = x.flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tensor_path_matches_plain_sampler() {
        let res = Resolution::new(12, 9);
        let mut p = TpsParams::zero();
        p.set(1, 1, 0.13, -0.07);
        p.set(3, 2, -0.2, 0.1);
        let x = image(1, 2, 12, 9, DType::F64);
        let theta = Tensor::from_vec(p.offsets.to_vec(), (1, NUM_PARAMS), &Device::Cpu).unwrap().to_dtype(DType::F64).unwrap();
        let got: Vec<f64> = TpsWarper::new().warp(&x, &theta).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let chw: Vec<f32> = x.to_dtype(DType::F32).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let want = sample_bilinear(&chw, 2, res, &tps_grid(&p, res).unwrap());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - *b as f64).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_wrt_theta_and_image() {
        let warper = TpsWarper::new();
        let x = image(1, 2, 8, 6, DType::F64);
        // Nonzero everywhere so no sample sits exactly on the image border, where
        // the sampler has a kink.
        let theta: Vec<f64> = (0..NUM_PARAMS).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.013 + 0.005).collect();
        let theta = Tensor::from_vec(theta, (1, NUM_PARAMS), &Device::Cpu).unwrap();
        let weights = image(1, 2, 8, 6, DType::F64);
        let err = gradient_check(
            &[theta, x],
            |t| Ok((warper.warp(&t[1], &t[0])? * &weights)?.sum_all()?),
            1e-6,
            1,
        )
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn shifted_grid_zero_pads_border() {
        let x = image(1, 1, 4, 5, DType::F32);
        let res = Resolution::new(4, 5);
        let gx = shifted(res, 2.0 / 4.0);
        let grid = GridTensor {
            x: Tensor::from_vec(gx.0, (1, 20), &Device::Cpu).unwrap(),
            y: Tensor::from_vec(gx.1, (1, 20), &Device::Cpu).unwrap(),
            resolution: res,
        };
        let y: Vec<f32> = grid_sample(&x, &grid).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let xv: Vec<f32> = x.flatten_all().unwrap().to_vec1().unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let want = if j < 4 { xv[i * 5 + j + 1] } else { 0.0 };
                assert!((y[i * 5 + j] - want).abs() < 1e-6);
            }
        }
    }

    fn shifted(res: Resolution, dx: f64) -> (Vec<f32>, Vec<f32>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..res.height {
            for j in 0..res.width {
                let (x, y) = normalized(j, i, res);
                xs.push((x + dx) as f32);
                ys.push(y as f32);
            }
        }
        (xs, ys)
    }
}
