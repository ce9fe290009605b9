//! Feature extractors, correlation matching and TPS parameter regression.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::tps::NUM_PARAMS;
use crate::nn::layers::{l2_normalize_channels, pad_to_min, BatchNorm2d, Conv2d, Linear};
use crate::nn::Scope;
use crate::dataset::Resolution;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpNetConfig {
    /// Channels of the first extractor layer; later layers double up to 8×.
    pub width: usize,
    /// Channels of the first regressor layer.
    pub regressor_width: usize,
    /// Stride-2 extractor layers before the HD extra one. Four keep a 16×12
    /// correlation grid at 256×192; small inputs use fewer.
    pub depth: usize,
    pub hd_extra_downsample: bool,
    pub normalize_correlation: bool,
    /// Channels of the person representation (agnostic image + pose).
    pub person_channels: usize,
}

impl Default for WarpNetConfig {
    fn default() -> Self {
        Self { width: 64, regressor_width: 512, depth: 4, hd_extra_downsample: false, normalize_correlation: true, person_channels: 3 + 18 }
    }
}

impl WarpNetConfig {
    pub fn downsamples(&self) -> usize {
        self.depth + usize::from(self.hd_extra_downsample)
    }

    /// Spatial size of the extractor output for an input of `res`.
    pub fn coarse(&self, res: Resolution) -> Resolution {
        let mut r = res;
        for _ in 0..self.downsamples() {
            r = Resolution::new(r.height / 2, r.width / 2);
        }
        r
    }

    fn regressor_output(&self, res: Resolution) -> Resolution {
        let mut r = self.coarse(res);
        for _ in 0..2 {
            r = Resolution::new(r.height.max(2) / 2, r.width.max(2) / 2);
        }
        r
    }
}

struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    fn new(s: &Scope, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        Ok(Self { conv: Conv2d::no_bias(&s.sub("conv"), cin, cout, k, stride, pad)?, bn: BatchNorm2d::new(&s.sub("bn"), cout)? })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let x = if self.conv.stride == 2 { pad_to_min(x, 2)? } else { x.clone() };
        Ok(self.bn.forward(&self.conv.forward(&x)?, train)?.relu()?)
    }
}

struct Extractor {
    layers: Vec<ConvBn>,
}

impl Extractor {
    fn new(s: &Scope, cin: usize, cfg: &WarpNetConfig) -> Result<Self> {
        let w = cfg.width;
        let widths: Vec<usize> = (0..cfg.downsamples()).map(|i| w << i.min(3)).collect();
        let mut layers = Vec::new();
        let mut c = cin;
        for (i, &cout) in widths.iter().enumerate() {
            layers.push(ConvBn::new(&s.sub(format!("down{i}")), c, cout, 4, 2, 1)?);
            c = cout;
        }
        for i in 0..2 {
            layers.push(ConvBn::new(&s.sub(format!("same{i}")), c, 8 * w, 3, 1, 1)?);
            c = 8 * w;
        }
        Ok(Self { layers })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut x = x.clone();
        for l in &self.layers {
            x = l.forward(&x, train)?;
        }
        Ok(x)
    }
}

/// Similarity of every garment cell to every person cell: (B, h·w, h, w),
/// channel index = garment cell, spatial position = person cell.
pub fn correlation(garment: &Tensor, person: &Tensor, normalize: bool) -> Result<Tensor> {
    if garment.dims() != person.dims() {
        return Err(Error::Shape(format!("feature maps differ: {:?} vs {:?}", garment.dims(), person.dims())));
    }
    let (b, c, h, w) = garment.dims4()?;
    let (a, p) = if normalize {
        (l2_normalize_channels(garment)?, l2_normalize_channels(person)?)
    } else {
        (garment.clone(), person.clone())
    };
    let a = a.reshape((b, c, h * w))?.transpose(1, 2)?.contiguous()?;
    let p = p.reshape((b, c, h * w))?;
    Ok(a.matmul(&p)?.reshape((b, h * w, h, w))?)
}

pub struct WarpNet {
    pub config: WarpNetConfig,
    garment: Extractor,
    person: Extractor,
    regressor: Vec<ConvBn>,
    head: Linear,
    resolution: Resolution,
}

impl WarpNet {
    pub fn new(s: &Scope, cfg: WarpNetConfig, res: Resolution) -> Result<Self> {
        let coarse = cfg.coarse(res);
        if coarse.height == 0 || coarse.width == 0 {
            return Err(Error::Config(format!("resolution {res:?} is too small for {} downsamplings", cfg.downsamples())));
        }
        let garment = Extractor::new(&s.sub("garment"), 3, &cfg)?;
        let person = Extractor::new(&s.sub("person"), cfg.person_channels, &cfg)?;
        let r = cfg.regressor_width;
        let widths = [r, r / 2, r / 4, r / 8];
        let mut regressor = Vec::new();
        let mut c = coarse.pixels();
        for (i, &cout) in widths.iter().enumerate() {
            let (k, stride) = if i < 2 { (4, 2) } else { (3, 1) };
            regressor.push(ConvBn::new(&s.sub(format!("reg{i}")), c, cout.max(1), k, stride, 1)?);
            c = cout.max(1);
        }
        let out = cfg.regressor_output(res);
        let head = Linear::zeros(&s.sub("head"), c * out.pixels(), NUM_PARAMS)?;
        Ok(Self { config: cfg, garment, person, regressor, head, resolution: res })
    }

    /// Offsets θ (B, 50) for garment `c` (B, 3, H, W) and person `person`
    /// (B, person_channels, H, W).
    pub fn forward(&self, c: &Tensor, person: &Tensor, train: bool) -> Result<Tensor> {
        let (b, _, h, w) = c.dims4()?;
        let (pb, pc, ph, pw) = person.dims4()?;
        if (b, h, w) != (pb, ph, pw) || Resolution::new(h, w) != self.resolution {
            return Err(Error::Shape(format!(
                "garment {:?} and person {:?} must share the configured size {:?}",
                c.dims(),
                person.dims(),
                self.resolution
            )));
        }
        if pc != self.config.person_channels {
            return Err(Error::Shape(format!("person input has {pc} channels, expected {}", self.config.person_channels)));
        }
        let fa = self.garment.forward(c, train)?;
        let fb = self.person.forward(person, train)?;
        let mut x = correlation(&fa, &fb, self.config.normalize_correlation)?;
        for l in &self.regressor {
            x = l.forward(&x, train)?;
        }
        self.head.forward(&x.flatten_from(1)?)
    }
}
