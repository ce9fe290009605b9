//! Layers built on [`ParamStore`](super::ParamStore) parameters.

use candle_core::{Tensor, Var};

use super::conv::conv2d;
use super::params::{Init, Scope};
use crate::error::Result;

const NORM_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(s: &Scope, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        Self::build(s, cin, cout, k, stride, pad, true)
    }

    pub fn no_bias(s: &Scope, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        Self::build(s, cin, cout, k, stride, pad, false)
    }

    fn build(s: &Scope, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool) -> Result<Self> {
        let weight = s.get("weight", (cout, cin, k, k), Init::kaiming(cin * k * k))?;
        let bias = if bias { Some(s.get("bias", cout, Init::Zeros)?) } else { None };
        Ok(Self { weight, bias, stride, pad })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d(x, &self.weight, self.stride, self.pad)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, (), 1, 1))?)?,
            None => y,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }
}

/// Transposed convolution with a 2×2 kernel and stride 2 (exact upsampling by two).
#[derive(Debug, Clone)]
pub struct Upsample2x {
    weight: Tensor,
    bias: Tensor,
}

impl Upsample2x {
    pub fn new(s: &Scope, cin: usize, cout: usize) -> Result<Self> {
        let weight = s.get("weight", (cin, cout * 4), Init::kaiming(cin))?;
        let bias = s.get("bias", cout, Init::Zeros)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let cout = self.bias.dim(0)?;
        let flat = x.reshape((b, c, h * w))?.transpose(1, 2)?;
        let y = flat.broadcast_matmul(&self.weight)?;
        let y = y.reshape((b, h, w, cout, 2, 2))?.permute([0, 3, 1, 4, 2, 5])?.reshape((b, cout, 2 * h, 2 * w))?;
        Ok(y.broadcast_add(&self.bias.reshape((1, cout, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(s: &Scope, din: usize, dout: usize) -> Result<Self> {
        let weight = s.get("weight", (din, dout), Init::kaiming(din))?;
        let bias = s.get("bias", dout, Init::Zeros)?;
        Ok(Self { weight, bias })
    }

    pub fn zeros(s: &Scope, din: usize, dout: usize) -> Result<Self> {
        let weight = s.get("weight", (din, dout), Init::Zeros)?;
        let bias = s.get("bias", dout, Init::Zeros)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

fn affine(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let c = weight.dim(0)?;
    Ok(x.broadcast_mul(&weight.reshape((1, c, 1, 1))?)?.broadcast_add(&bias.reshape((1, c, 1, 1))?)?)
}

/// Batch normalization over (N, H, W) with running statistics for evaluation.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    weight: Tensor,
    bias: Tensor,
    running_mean: Var,
    running_var: Var,
}

impl BatchNorm2d {
    pub fn new(s: &Scope, c: usize) -> Result<Self> {
        Ok(Self {
            weight: s.get("weight", c, Init::Const(1.0))?,
            bias: s.get("bias", c, Init::Zeros)?,
            running_mean: s.var("running_mean", c, Init::Zeros)?,
            running_var: s.var("running_var", c, Init::Const(1.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let (mean, var) = if train {
            let mean = x.mean_keepdim((0, 2, 3))?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
            let n = (b * h * w) as f64;
            let unbiased = if n > 1.0 { (var.detach() * (n / (n - 1.0)))? } else { var.detach() };
            let m = BN_MOMENTUM;
            self.running_mean
                .set(&((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach().flatten_all()? * m)?)?)?;
            self.running_var
                .set(&((self.running_var.as_tensor() * (1.0 - m))? + (unbiased.flatten_all()? * m)?)?)?;
            (mean, var)
        } else {
            (self.running_mean.as_tensor().reshape((1, c, 1, 1))?, self.running_var.as_tensor().reshape((1, c, 1, 1))?)
        };
        let xn = x.broadcast_sub(&mean)?.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
        affine(&xn, &self.weight, &self.bias)
    }
}

/// Per-sample, per-channel normalization over (H, W) with a learned affine.
#[derive(Debug, Clone)]
pub struct InstanceNorm2d {
    weight: Tensor,
    bias: Tensor,
}

impl InstanceNorm2d {
    pub fn new(s: &Scope, c: usize) -> Result<Self> {
        Ok(Self { weight: s.get("weight", c, Init::Const(1.0))?, bias: s.get("bias", c, Init::Zeros)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim((2, 3))?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim((2, 3))?;
        let xn = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
        affine(&xn, &self.weight, &self.bias)
    }
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.relu()?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Log-softmax along `dim`.
pub fn log_softmax<Dm: candle_core::shape::Dim + Copy>(x: &Tensor, dim: Dm) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(dim)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

pub fn softmax<Dm: candle_core::shape::Dim + Copy>(x: &Tensor, dim: Dm) -> Result<Tensor> {
    Ok(log_softmax(x, dim)?.exp()?)
}

/// L2-normalizes along the channel axis.
pub fn l2_normalize_channels(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(1)? + 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// Zero-pads the spatial dims up to at least `min` each.
pub fn pad_to_min(x: &Tensor, min: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let mut y = x.clone();
    if h < min {
        y = y.pad_with_zeros(2, 0, min - h)?;
    }
    if w < min {
        y = y.pad_with_zeros(3, 0, min - w)?;
    }
    Ok(y)
}

/// Crops or zero-pads the spatial dims of `x` to `(h, w)`, anchored top-left.
pub fn match_size(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (_, _, xh, xw) = x.dims4()?;
    let mut y = x.clone();
    if xh > h {
        y = y.narrow(2, 0, h)?;
    } else if xh < h {
        y = y.pad_with_zeros(2, 0, h - xh)?;
    }
    if xw > w {
        y = y.narrow(3, 0, w)?;
    } else if xw < w {
        y = y.pad_with_zeros(3, 0, w - xw)?;
    }
    Ok(y)
}

pub fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.abs()?.mean_all()?)
}
