//! Discriminators: the pixel-level semantic discriminator (18 parse classes
//! plus a fake class per pixel), its binary real/fake reduction, a patch
//! discriminator, and the no-discriminator baseline.

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::palette::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::nn::layers::{leaky_relu, log_softmax, match_size, pad_to_min, BatchNorm2d, Conv2d, Upsample2x};
use crate::nn::Scope;

pub const FAKE_CLASS: usize = NUM_CLASSES;
pub const PSAD_CHANNELS: usize = NUM_CLASSES + 1;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvMode {
    Psad,
    Patch,
    Binary,
    None,
}

impl AdvMode {
    pub const ALL: [AdvMode; 4] = [AdvMode::None, AdvMode::Binary, AdvMode::Patch, AdvMode::Psad];

    pub fn as_str(self) -> &'static str {
        match self {
            AdvMode::Psad => "psad",
            AdvMode::Patch => "patch",
            AdvMode::Binary => "binary",
            AdvMode::None => "none",
        }
    }
}

impl fmt::Display for AdvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdvMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psad" => Ok(AdvMode::Psad),
            "patch" => Ok(AdvMode::Patch),
            "binary" => Ok(AdvMode::Binary),
            "none" => Ok(AdvMode::None),
            other => Err(Error::Argument(format!("unknown discriminator `{other}` (psad, patch, binary, none)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscConfig {
    /// Channels of the first layer; deeper layers double up to 8×.
    pub width: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self { width: 64 }
    }
}

/// Encoder–decoder with 6 stride-2 downsampling and 6 upsampling blocks,
/// emitting per-pixel logits at the input size.
pub struct SegmentationDisc {
    down: Vec<Conv2d>,
    up: Vec<Upsample2x>,
    head: Conv2d,
}

impl SegmentationDisc {
    pub const BLOCKS: usize = 6;

    pub fn new(s: &Scope, cfg: DiscConfig, out_channels: usize) -> Result<Self> {
        let widths: Vec<usize> = (0..Self::BLOCKS).map(|i| cfg.width << i.min(3)).collect();
        let mut down = Vec::new();
        let mut c = 3;
        for (i, &w) in widths.iter().enumerate() {
            down.push(Conv2d::new(&s.sub(format!("down{i}")), c, w, 4, 2, 1)?);
            c = w;
        }
        // Decoder level i restores the size of encoder output i - 1 (the
        // input image for i = 0) and concatenates it.
        let mut up = Vec::new();
        for i in (0..Self::BLOCKS).rev() {
            let skip = if i == 0 { 3 } else { widths[i - 1] };
            let out = if i == 0 { cfg.width } else { widths[i - 1] };
            up.push(Upsample2x::new(&s.sub(format!("up{i}")), c, out)?);
            c = out + skip;
        }
        let head = Conv2d::new(&s.sub("head"), c, out_channels, 1, 1, 0)?;
        Ok(Self { down, up, head })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut skips = vec![x.clone()];
        let mut h = x.clone();
        for conv in &self.down {
            h = leaky_relu(&conv.forward(&pad_to_min(&h, 2)?)?, LEAKY_SLOPE)?;
            skips.push(h.clone());
        }
        skips.pop();
        for up in &self.up {
            let skip = skips.pop().expect("one skip per level");
            let (_, _, sh, sw) = skip.dims4()?;
            let u = match_size(&leaky_relu(&up.forward(&h)?, LEAKY_SLOPE)?, sh, sw)?;
            h = Tensor::cat(&[&u, &skip], 1)?;
        }
        self.head.forward(&h)
    }
}

/// Three stride-2 and two stride-1 4×4 convolutions producing a score per patch.
pub struct PatchDisc {
    convs: Vec<Conv2d>,
    norms: Vec<Option<BatchNorm2d>>,
}

impl PatchDisc {
    pub fn new(s: &Scope, cfg: DiscConfig) -> Result<Self> {
        let w = cfg.width;
        let spec = [(3, w, 2), (w, 2 * w, 2), (2 * w, 4 * w, 2), (4 * w, 8 * w, 1), (8 * w, 1, 1)];
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for (i, &(cin, cout, stride)) in spec.iter().enumerate() {
            let pad = if stride == 2 { 1 } else { 0 };
            convs.push(Conv2d::new(&s.sub(format!("conv{i}")), cin, cout, 4, stride, pad)?);
            let normed = i > 0 && i < spec.len() - 1;
            norms.push(if normed { Some(BatchNorm2d::new(&s.sub(format!("bn{i}")), cout)?) } else { None });
        }
        Ok(Self { convs, norms })
    }

    /// Score map (B, 1, H/8, W/8).
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.convs.len() - 1;
        for (i, (conv, norm)) in self.convs.iter().zip(&self.norms).enumerate() {
            if conv.stride == 1 {
                // Same-size output for an even kernel: one row/column before, two after.
                h = h.pad_with_zeros(2, 1, 2)?.pad_with_zeros(3, 1, 2)?;
            } else {
                h = pad_to_min(&h, 2)?;
            }
            h = conv.forward(&h)?;
            if let Some(n) = norm {
                h = n.forward(&h, train)?;
            }
            if i < last {
                h = leaky_relu(&h, LEAKY_SLOPE)?;
            }
        }
        Ok(h)
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.len() != NUM_CLASSES {
        return Err(Error::Shape(format!("class weights need {NUM_CLASSES} entries, got {}", weights.len())));
    }
    Ok(())
}

fn check_labels(labels: &Tensor) -> Result<()> {
    let v: Vec<u32> = labels.flatten_all()?.to_vec1()?;
    if let Some(&bad) = v.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::LabelOutOfRange { value: bad, classes: NUM_CLASSES });
    }
    Ok(())
}

/// `-mean(w[label] · log softmax(logits)[label])` over batch and pixels.
fn weighted_class_nll(logits: &Tensor, labels: &Tensor, weights: &[f64]) -> Result<Tensor> {
    check_weights(weights)?;
    check_labels(labels)?;
    let (b, _, h, w) = logits.dims4()?;
    if labels.dims() != [b, h, w] {
        return Err(Error::Shape(format!("labels {:?} vs logits {:?}", labels.dims(), logits.dims())));
    }
    let lp = log_softmax(logits, 1)?;
    let picked = lp.gather(&labels.unsqueeze(1)?.contiguous()?, 1)?.squeeze(1)?;
    let table = Tensor::from_vec(weights.to_vec(), NUM_CLASSES, &Device::Cpu)?.to_dtype(logits.dtype())?;
    let pixel_w = table.index_select(&labels.flatten_all()?, 0)?.reshape((b, h, w))?;
    Ok((picked * pixel_w)?.mean_all()?.neg()?)
}

/// `-mean log softmax(logits)[channel]` over batch and pixels.
fn channel_nll(logits: &Tensor, channel: usize) -> Result<Tensor> {
    Ok(log_softmax(logits, 1)?.narrow(1, channel, 1)?.mean_all()?.neg()?)
}

/// Discriminator loss on real logits (B, 19, H, W) labelled by the parse
/// and generated logits pushed to the fake channel.
pub fn psad_d_loss(real_logits: &Tensor, fake_logits: &Tensor, labels: &Tensor, weights: &[f64]) -> Result<Tensor> {
    check_channels(real_logits, PSAD_CHANNELS)?;
    check_channels(fake_logits, PSAD_CHANNELS)?;
    let real = weighted_class_nll(real_logits, labels, weights)?;
    let fake = channel_nll(fake_logits, FAKE_CLASS)?;
    Ok((real + fake)?)
}

/// Generator loss: generated pixels pulled toward their semantic class.
pub fn psad_g_loss(fake_logits: &Tensor, labels: &Tensor, weights: &[f64]) -> Result<Tensor> {
    check_channels(fake_logits, PSAD_CHANNELS)?;
    weighted_class_nll(fake_logits, labels, weights)
}

pub const BINARY_REAL: usize = 0;
pub const BINARY_FAKE: usize = 1;

/// Per-pixel two-class cross-entropy: (d_loss, g_loss).
pub fn binary_losses(real_logits: Option<&Tensor>, fake_logits: &Tensor) -> Result<(Option<Tensor>, Tensor)> {
    check_channels(fake_logits, 2)?;
    let d = match real_logits {
        Some(r) => {
            check_channels(r, 2)?;
            Some((channel_nll(r, BINARY_REAL)? + channel_nll(fake_logits, BINARY_FAKE)?)?)
        }
        None => None,
    };
    let g = channel_nll(fake_logits, BINARY_REAL)?;
    Ok((d, g))
}

/// Least-squares objectives on patch scores: (d_loss, g_loss).
pub fn patch_losses(real_scores: Option<&Tensor>, fake_scores: &Tensor) -> Result<(Option<Tensor>, Tensor)> {
    let d = match real_scores {
        Some(r) => Some((((r - 1.0)?.sqr()?.mean_all()? + fake_scores.sqr()?.mean_all()?)? * 0.5)?),
        None => None,
    };
    let g = (fake_scores - 1.0)?.sqr()?.mean_all()?;
    Ok((d, g))
}

fn check_channels(t: &Tensor, c: usize) -> Result<()> {
    let got = t.dim(1)?;
    if got != c {
        return Err(Error::Shape(format!("discriminator output has {got} channels, expected {c}")));
    }
    Ok(())
}

enum Net {
    Segmentation(SegmentationDisc),
    Patch(PatchDisc),
}

/// A discriminator for one adversarial mode.
pub struct Discriminator {
    pub mode: AdvMode,
    net: Net,
}

impl Discriminator {
    /// `None` for [`AdvMode::None`].
    pub fn new(s: &Scope, mode: AdvMode, cfg: DiscConfig) -> Result<Option<Self>> {
        let net = match mode {
            AdvMode::None => return Ok(None),
            AdvMode::Psad => Net::Segmentation(SegmentationDisc::new(s, cfg, PSAD_CHANNELS)?),
            AdvMode::Binary => Net::Segmentation(SegmentationDisc::new(s, cfg, 2)?),
            AdvMode::Patch => Net::Patch(PatchDisc::new(s, cfg)?),
        };
        Ok(Some(Self { mode, net }))
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        match &self.net {
            Net::Segmentation(n) => n.forward(x),
            Net::Patch(n) => n.forward(x, train),
        }
    }

    /// Discriminator objective; `fake` must already be detached from the generator.
    pub fn d_loss(&self, real: &Tensor, fake: &Tensor, labels: &Tensor, weights: &[f64]) -> Result<Tensor> {
        let r = self.forward(real, true)?;
        let f = self.forward(fake, true)?;
        match self.mode {
            AdvMode::Psad => psad_d_loss(&r, &f, labels, weights),
            AdvMode::Binary => Ok(binary_losses(Some(&r), &f)?.0.expect("real logits given")),
            AdvMode::Patch => Ok(patch_losses(Some(&r), &f)?.0.expect("real scores given")),
            AdvMode::None => unreachable!("no discriminator is built for mode none"),
        }
    }

    /// Generator-side adversarial term for generated images attached to the graph.
    pub fn g_loss(&self, fake: &Tensor, labels: &Tensor, weights: &[f64]) -> Result<Tensor> {
        let f = self.forward(fake, true)?;
        match self.mode {
            AdvMode::Psad => psad_g_loss(&f, labels, weights),
            AdvMode::Binary => Ok(binary_losses(None, &f)?.1),
            AdvMode::Patch => Ok(patch_losses(None, &f)?.1),
            AdvMode::None => unreachable!("no discriminator is built for mode none"),
        }
    }
}

/// Uniform weights, for callers without dataset statistics.
pub fn unit_weights() -> Vec<f64> {
    vec![1.0; NUM_CLASSES]
}

/// A (B, C, H, W) tensor filled with `value`.
pub fn constant_logits(b: usize, c: usize, h: usize, w: usize, value: f64, dtype: DType) -> Result<Tensor> {
    Ok((Tensor::ones((b, c, h, w), dtype, &Device::Cpu)? * value)?)
}
