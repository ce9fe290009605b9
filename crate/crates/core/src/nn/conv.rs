//! 2-D convolution as im2col + GEMM, with hand-written backward passes.

use candle_core::{CpuStorage, CustomOp2, DType, Layout, Shape, Tensor};

type CResult<T> = candle_core::Result<T>;

trait Elem: Copy + Default + std::ops::AddAssign + 'static {
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
    );
    fn zero() -> Self {
        Self::default()
    }
    fn one() -> Self;
}

impl Elem for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, 1)
    }
    fn one() -> Self {
        1.0
    }
}

impl Elem for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, 1)
    }
    fn one() -> Self {
        1.0
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(input: (usize, usize, usize, usize), cout: usize, k: usize, stride: usize, pad: usize) -> CResult<Self> {
        let (batch, cin, h, w) = input;
        if h + 2 * pad < k || w + 2 * pad < k {
            candle_core::bail!("conv input {h}x{w} with padding {pad} is smaller than kernel {k}");
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Ok(Self { batch, cin, h, w, cout, k, stride, pad, oh, ow })
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// Input column covered by output column `ox` at kernel tap `kx`.
    fn src(&self, o: usize, kk: usize) -> isize {
        (o * self.stride + kk) as isize - self.pad as isize
    }
}

fn im2col<T: Elem>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let n = g.out_pixels();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.oh {
                    let iy = g.src(oy, ky);
                    let d = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        d.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in d.iter_mut().enumerate() {
                        let ix = g.src(ox, kx);
                        *v = if ix < 0 || ix >= g.w as isize { T::zero() } else { srow[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Elem>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let n = g.out_pixels();
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.oh {
                    let iy = g.src(oy, ky);
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        let ix = g.src(ox, kx);
                        if ix >= 0 && (ix as usize) < g.w {
                            drow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn forward<T: Elem>(x: &[T], w: &[T], g: &Geometry) -> Vec<T> {
    let (n, kk) = (g.out_pixels(), g.rows());
    let mut cols = vec![T::zero(); kk * n];
    let mut out = vec![T::zero(); g.batch * g.cout * n];
    for b in 0..g.batch {
        im2col(&x[b * g.cin * g.h * g.w..], g, &mut cols);
        unsafe {
            T::gemm(
                g.cout,
                kk,
                n,
                w.as_ptr(),
                kk as isize,
                1,
                cols.as_ptr(),
                n as isize,
                1,
                T::zero(),
                out[b * g.cout * n..].as_mut_ptr(),
                n as isize,
            );
        }
    }
    out
}

fn grad_input<T: Elem>(grad: &[T], w: &[T], g: &Geometry) -> Vec<T> {
    let (n, kk) = (g.out_pixels(), g.rows());
    let mut cols = vec![T::zero(); kk * n];
    let mut dx = vec![T::zero(); g.batch * g.cin * g.h * g.w];
    for b in 0..g.batch {
        unsafe {
            T::gemm(
                kk,
                g.cout,
                n,
                w.as_ptr(),
                1,
                kk as isize,
                grad[b * g.cout * n..].as_ptr(),
                n as isize,
                1,
                T::zero(),
                cols.as_mut_ptr(),
                n as isize,
            );
        }
        col2im(&cols, g, &mut dx[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w]);
    }
    dx
}

fn grad_kernel<T: Elem>(x: &[T], grad: &[T], g: &Geometry) -> Vec<T> {
    let (n, kk) = (g.out_pixels(), g.rows());
    let mut cols = vec![T::zero(); kk * n];
    let mut dw = vec![T::zero(); g.cout * kk];
    for b in 0..g.batch {
        im2col(&x[b * g.cin * g.h * g.w..], g, &mut cols);
        let beta = if b == 0 { T::zero() } else { T::one() };
        unsafe {
            T::gemm(
                g.cout,
                n,
                kk,
                grad[b * g.cout * n..].as_ptr(),
                n as isize,
                1,
                cols.as_ptr(),
                1,
                n as isize,
                beta,
                dw.as_mut_ptr(),
                kk as isize,
            );
        }
    }
    dw
}

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> CResult<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("conv expects contiguous operands"),
    }
}

macro_rules! dispatch {
    ($s1:expr, $l1:expr, $s2:expr, $l2:expr, |$a:ident, $b:ident| $body:expr) => {
        match ($s1, $s2) {
            (CpuStorage::F32(a), CpuStorage::F32(b)) => {
                let ($a, $b) = (contiguous(a, $l1)?, contiguous(b, $l2)?);
                CpuStorage::F32($body)
            }
            (CpuStorage::F64(a), CpuStorage::F64(b)) => {
                let ($a, $b) = (contiguous(a, $l1)?, contiguous(b, $l2)?);
                CpuStorage::F64($body)
            }
            _ => candle_core::bail!("conv supports matching f32 or f64 operands"),
        }
    };
}

struct Conv2dOp {
    stride: usize,
    pad: usize,
}

impl CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "im2col-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        let (cout, cin, k, k2) = l2.shape().dims4()?;
        let dims = l1.shape().dims4()?;
        if k != k2 || cin != dims.1 {
            candle_core::bail!("conv kernel {:?} does not match input {:?}", l2.shape(), l1.shape());
        }
        let g = Geometry::new(dims, cout, k, self.stride, self.pad)?;
        let out = dispatch!(s1, l1, s2, l2, |x, w| forward(x, w, &g));
        Ok((out, Shape::from((g.batch, cout, g.oh, g.ow))))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, grad: &Tensor) -> CResult<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let (_, _, h, wd) = x.dims4()?;
        let dx = grad.apply_op2_no_bwd(w, &ConvGradInput { stride: self.stride, pad: self.pad, h, w: wd })?;
        let k = w.dim(2)?;
        let dw = x.apply_op2_no_bwd(&grad, &ConvGradKernel { stride: self.stride, pad: self.pad, k })?;
        Ok((Some(dx), Some(dw)))
    }
}

struct ConvGradInput {
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
}

impl CustomOp2 for ConvGradInput {
    fn name(&self) -> &'static str {
        "im2col-conv2d-grad-input"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        let (batch, cout, _, _) = l1.shape().dims4()?;
        let (_, cin, k, _) = l2.shape().dims4()?;
        let g = Geometry::new((batch, cin, self.h, self.w), cout, k, self.stride, self.pad)?;
        let out = dispatch!(s1, l1, s2, l2, |gr, w| grad_input(gr, w, &g));
        Ok((out, Shape::from((batch, cin, self.h, self.w))))
    }
}

struct ConvGradKernel {
    stride: usize,
    pad: usize,
    k: usize,
}

impl CustomOp2 for ConvGradKernel {
    fn name(&self) -> &'static str {
        "im2col-conv2d-grad-kernel"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> CResult<(CpuStorage, Shape)> {
        let dims = l1.shape().dims4()?;
        let cout = l2.shape().dims4()?.1;
        let g = Geometry::new(dims, cout, self.k, self.stride, self.pad)?;
        let out = dispatch!(s1, l1, s2, l2, |x, gr| grad_kernel(x, gr, &g));
        Ok((out, Shape::from((cout, dims.1, self.k, self.k))))
    }
}

/// Cross-correlation of `x` (B, Cin, H, W) with `kernel` (Cout, Cin, k, k),
/// symmetric zero padding.
pub fn conv2d(x: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> CResult<Tensor> {
    if x.dtype() != kernel.dtype() || !matches!(x.dtype(), DType::F32 | DType::F64) {
        candle_core::bail!("conv2d dtype mismatch: {:?} vs {:?}", x.dtype(), kernel.dtype());
    }
    x.contiguous()?.apply_op2(&kernel.contiguous()?, Conv2dOp { stride, pad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn naive(x: &[f64], w: &[f64], g: &Geometry) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.cout * g.oh * g.ow];
        for b in 0..g.batch {
            for co in 0..g.cout {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = 0.0;
                        for ci in 0..g.cin {
                            for ky in 0..g.k {
                                for kx in 0..g.k {
                                    let iy = g.src(oy, ky);
                                    let ix = g.src(ox, kx);
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    acc += x[((b * g.cin + ci) * g.h + iy as usize) * g.w + ix as usize]
                                        * w[((co * g.cin + ci) * g.k + ky) * g.k + kx];
                                }
                            }
                        }
                        out[((b * g.cout + co) * g.oh + oy) * g.ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn seq(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919 % 97) as f64 / 97.0 - 0.5) * scale).collect()
    }

    #[test]
    fn matches_direct_sum() {
        for (k, s, p) in [(3, 1, 1), (4, 2, 1), (1, 1, 0), (4, 1, 0), (3, 2, 0)] {
            let g = Geometry::new((2, 3, 7, 6), 4, k, s, p).unwrap();
            let x = seq(2 * 3 * 7 * 6, 2.0);
            let w = seq(4 * 3 * k * k, 1.0);
            let xt = Tensor::from_vec(x.clone(), (2, 3, 7, 6), &Device::Cpu).unwrap();
            let wt = Tensor::from_vec(w.clone(), (4, 3, k, k), &Device::Cpu).unwrap();
            let got: Vec<f64> = conv2d(&xt, &wt, s, p).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            let want = naive(&x, &w, &g);
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "k{k} s{s} p{p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (k, s, p) in [(3, 1, 1), (4, 2, 1)] {
            let dev = Device::Cpu;
            let x = Var::from_vec(seq(2 * 2 * 6 * 5, 2.0), (2, 2, 6, 5), &dev).unwrap();
            let w = Var::from_vec(seq(3 * 2 * k * k, 1.0), (3, 2, k, k), &dev).unwrap();
            let probe = Tensor::from_vec(seq(2 * 3 * 36, 3.0), 2 * 3 * 36, &dev).unwrap();
            let loss = |x: &Tensor, w: &Tensor| -> Tensor {
                let y = conv2d(x, w, s, p).unwrap().flatten_all().unwrap();
                let n = y.dim(0).unwrap();
                (y.sqr().unwrap() * probe.narrow(0, 0, n).unwrap()).unwrap().sum_all().unwrap()
            };
            let grads = loss(x.as_tensor(), w.as_tensor()).backward().unwrap();
            for var in [&x, &w] {
                let analytic: Vec<f64> = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
                let base: Vec<f64> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
                for i in (0..base.len()).step_by(3) {
                    let eps = 1e-6;
                    let eval = |d: f64| {
                        let mut v = base.clone();
                        v[i] += d;
                        let t = Tensor::from_vec(v, var.shape(), &dev).unwrap();
                        let l = if std::ptr::eq(var, &x) { loss(&t, w.as_tensor()) } else { loss(x.as_tensor(), &t) };
                        l.to_scalar::<f64>().unwrap()
                    };
                    let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
                    let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-8);
                    assert!(rel < 1e-5, "k{k} s{s} idx {i}: {} vs {fd}", analytic[i]);
                }
            }
        }
    }

    #[test]
    fn rejects_kernel_larger_than_input() {
        let x = Tensor::zeros((1, 1, 2, 2), DType::F32, &Device::Cpu).unwrap();
        let w = Tensor::zeros((1, 1, 4, 4), DType::F32, &Device::Cpu).unwrap();
        assert!(conv2d(&x, &w, 1, 0).is_err());
    }
}
