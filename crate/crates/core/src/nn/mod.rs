//! Tensor plumbing: convolution kernel, parameters, layers, optimizer and
//! conversions between dataset records and batched tensors.

mod adam;
mod conv;
pub mod layers;
mod params;

use candle_core::{DType, Device, Tensor};

pub use adam::{Adam, AdamConfig};
pub use conv::conv2d;
pub use params::{Init, ParamStore, Scope, BUFFER_MARKER};

use crate::dataset::palette::NUM_CLASSES;
use crate::dataset::{LabelMap, PoseTensor, Resolution, RgbImage};
use crate::error::{Error, Result};

fn stack(chunks: Vec<f32>, batch: usize, channels: usize, res: Resolution, dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(chunks, (batch, channels, res.height, res.width), &Device::Cpu)?.to_dtype(dtype)?)
}

fn common_resolution(mut sizes: impl Iterator<Item = Resolution>) -> Result<Resolution> {
    let first = sizes.next().ok_or_else(|| Error::Argument("empty batch".into()))?;
    if let Some(other) = sizes.find(|r| *r != first) {
        return Err(Error::Shape(format!("batch mixes resolutions {first:?} and {other:?}")));
    }
    Ok(first)
}

/// (B, 3, H, W) in `[0, 1]`.
pub fn rgb_batch(images: &[&RgbImage], dtype: DType) -> Result<Tensor> {
    let res = common_resolution(images.iter().map(|i| i.resolution()))?;
    let data = images.iter().flat_map(|i| i.to_chw()).collect();
    stack(data, images.len(), 3, res, dtype)
}

/// Image `index` of a (B, 3, H, W) batch, clamped to `[0, 1]`.
pub fn tensor_to_rgb(t: &Tensor, index: usize) -> Result<RgbImage> {
    let (_, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let chw: Vec<f32> = t.get(index)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let chw: Vec<f32> = chw.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(RgbImage::from_chw(Resolution::new(h, w), &chw))
}

/// (B, 18, H, W) one-hot parse maps.
pub fn one_hot_batch(parses: &[&LabelMap], dtype: DType) -> Result<Tensor> {
    let res = common_resolution(parses.iter().map(|p| p.resolution()))?;
    let n = res.pixels();
    let mut data = vec![0f32; parses.len() * NUM_CLASSES * n];
    for (b, p) in parses.iter().enumerate() {
        for (i, &v) in p.data.iter().enumerate() {
            if v as usize >= NUM_CLASSES {
                return Err(Error::LabelOutOfRange { value: v as u32, classes: NUM_CLASSES });
            }
            data[(b * NUM_CLASSES + v as usize) * n + i] = 1.0;
        }
    }
    stack(data, parses.len(), NUM_CLASSES, res, dtype)
}

/// (B, H, W) class indices.
pub fn label_batch(parses: &[&LabelMap]) -> Result<Tensor> {
    let res = common_resolution(parses.iter().map(|p| p.resolution()))?;
    let data: Vec<u32> = parses.iter().flat_map(|p| p.data.iter().map(|&v| v as u32)).collect();
    Ok(Tensor::from_vec(data, (parses.len(), res.height, res.width), &Device::Cpu)?)
}

/// Per-pixel argmax of (B, C, H, W) logits; ties resolve to the lowest index.
pub fn argmax_labels(logits: &Tensor) -> Result<Vec<LabelMap>> {
    let (b, c, h, w) = logits.dims4()?;
    let values: Vec<f32> = logits.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let n = h * w;
    Ok((0..b)
        .map(|bi| {
            let data = (0..n)
                .map(|p| {
                    let mut best = 0;
                    for k in 1..c {
                        if values[(bi * c + k) * n + p] > values[(bi * c + best) * n + p] {
                            best = k;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMap { height: h, width: w, data }
        })
        .collect())
}

pub fn pose_batch(poses: &[&PoseTensor], dtype: DType) -> Result<Tensor> {
    let res = common_resolution(poses.iter().map(|p| Resolution::new(p.height, p.width)))?;
    let channels = poses[0].channels;
    if poses.iter().any(|p| p.channels != channels) {
        return Err(Error::Shape("batch mixes pose encodings".into()));
    }
    let data = poses.iter().flat_map(|p| p.data.iter().copied()).collect();
    stack(data, poses.len(), channels, res, dtype)
}

/// (B, 1, H, W) with 1 where the mask is set.
pub fn mask_batch(masks: &[&[bool]], res: Resolution, dtype: DType) -> Result<Tensor> {
    if masks.iter().any(|m| m.len() != res.pixels()) {
        return Err(Error::Shape(format!("mask size does not match {res:?}")));
    }
    let data = masks.iter().flat_map(|m| m.iter().map(|&b| if b { 1.0 } else { 0.0 })).collect();
    stack(data, masks.len(), 1, res, dtype)
}

/// Scalar value of a rank-0 or single-element tensor.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
}

pub fn is_finite(t: &Tensor) -> Result<bool> {
    let v: Vec<f64> = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    Ok(v.iter().all(|x| x.is_finite()))
}

/// Central-difference check of the autograd gradient of `loss` with respect
/// to `inputs`, probing every `stride`-th element. Returns the worst relative
/// error `|a - f| / max(|a|, |f|, 1e-8)`.
pub fn gradient_check(
    inputs: &[Tensor],
    loss: impl Fn(&[Tensor]) -> Result<Tensor>,
    eps: f64,
    stride: usize,
) -> Result<f64> {
    let vars: Vec<candle_core::Var> =
        inputs.iter().map(candle_core::Var::from_tensor).collect::<candle_core::Result<_>>()?;
    let tensors: Vec<Tensor> = vars.iter().map(|v| v.as_tensor().clone()).collect();
    let grads = loss(&tensors)?.backward()?;
    let mut worst = 0f64;
    for (slot, var) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?,
            None => vec![0.0; var.elem_count()],
        };
        let base: Vec<f64> = var.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        for i in (0..base.len()).step_by(stride.max(1)) {
            let eval = |d: f64| -> Result<f64> {
                let mut v = base.clone();
                v[i] += d;
                let mut probe: Vec<Tensor> = inputs.to_vec();
                probe[slot] = Tensor::from_vec(v, var.shape(), &Device::Cpu)?.to_dtype(var.dtype())?;
                scalar(&loss(&probe)?)
            };
            let fd = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
