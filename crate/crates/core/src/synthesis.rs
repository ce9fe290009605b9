//! Try-on generator: a two-branch U-Net whose garment-branch skip connections
//! are warped by the predicted TPS before reaching the decoder.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::palette::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::geometry::TpsWarper;
use crate::nn::layers::{l1, Conv2d, Upsample2x};
use crate::nn::{Init, ParamStore, Scope};

pub const LAMBDA_ADV: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TryOnConfig {
    pub width: usize,
    pub hd_extra_block: bool,
    pub pose_channels: usize,
}

impl Default for TryOnConfig {
    fn default() -> Self {
        Self { width: 64, hd_extra_block: false, pose_channels: 18 }
    }
}

impl TryOnConfig {
    pub fn levels(&self) -> usize {
        if self.hd_extra_block {
            5
        } else {
            4
        }
    }

    /// Channels of the person branch: pose, agnostic image, parse one-hot.
    pub fn person_channels(&self) -> usize {
        self.pose_channels + 3 + NUM_CLASSES
    }

    fn widths(&self) -> Vec<usize> {
        (0..self.levels()).map(|i| self.width << i.min(3)).collect()
    }
}

/// conv 3×3 → ReLU, twice.
struct Block {
    convs: [Conv2d; 2],
}

impl Block {
    fn new(s: &Scope, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self { convs: [Conv2d::new(&s.sub("conv0"), cin, cout, 3, 1, 1)?, Conv2d::new(&s.sub("conv1"), cout, cout, 3, 1, 1)?] })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = self.convs[0].forward(x)?.relu()?;
        Ok(self.convs[1].forward(&x)?.relu()?)
    }
}

struct Encoder {
    blocks: Vec<Block>,
}

impl Encoder {
    fn new(s: &Scope, cin: usize, widths: &[usize]) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut c = cin;
        for (i, &w) in widths.iter().enumerate() {
            blocks.push(Block::new(&s.sub(format!("block{i}")), c, w)?);
            c = w;
        }
        Ok(Self { blocks })
    }

    /// Skip features of every level and the pooled output of the last block.
    fn forward(&self, x: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        let mut skips = Vec::new();
        let mut x = x.clone();
        for b in &self.blocks {
            let y = b.forward(&x)?;
            x = y.max_pool2d(2)?;
            skips.push(y);
        }
        Ok((skips, x))
    }
}

/// Garment-branch skips as consumed by the decoder, shallowest first.
pub struct GarmentSkips {
    pub raw: Vec<Tensor>,
    pub warped: Vec<Tensor>,
}

pub struct TryOnNet {
    pub config: TryOnConfig,
    garment: Encoder,
    person: Encoder,
    bottleneck: Block,
    up: Vec<(Upsample2x, Block)>,
    head: Conv2d,
}

impl TryOnNet {
    pub fn new(s: &Scope, config: TryOnConfig) -> Result<Self> {
        let widths = config.widths();
        let garment = Encoder::new(&s.sub("garment"), 3, &widths)?;
        let person = Encoder::new(&s.sub("person"), config.person_channels(), &widths)?;
        let deepest = *widths.last().expect("at least one level");
        let bottleneck = Block::new(&s.sub("bottleneck"), 2 * deepest, deepest)?;
        let mut up = Vec::new();
        let mut c = deepest;
        for (i, &w) in widths.iter().enumerate().rev() {
            let u = Upsample2x::new(&s.sub(format!("up{i}.upsample")), c, w)?;
            let b = Block::new(&s.sub(format!("up{i}.block")), 3 * w, w)?;
            up.push((u, b));
            c = w;
        }
        let head = Conv2d::new(&s.sub("head"), c, 3, 1, 1, 0)?;
        Ok(Self { config, garment, person, bottleneck, up, head })
    }

    fn person_input(&self, pose: &Tensor, agnostic: &Tensor, parse: &Tensor) -> Result<Tensor> {
        let pc = pose.dim(1)?;
        if pc != self.config.pose_channels || agnostic.dim(1)? != 3 || parse.dim(1)? != NUM_CLASSES {
            return Err(Error::Shape(format!(
                "person branch expects pose {}, agnostic 3 and parse {NUM_CLASSES} channels",
                self.config.pose_channels
            )));
        }
        Ok(Tensor::cat(&[pose, agnostic, parse], 1)?)
    }

    /// Branch-1 skips, before and after warping with `theta` at each level's size.
    pub fn garment_skips(&self, garment: &Tensor, theta: &Tensor, warper: &TpsWarper) -> Result<GarmentSkips> {
        let (raw, _) = self.garment.forward(garment)?;
        let warped = raw.iter().map(|s| warper.warp(s, theta)).collect::<Result<Vec<_>>>()?;
        Ok(GarmentSkips { raw, warped })
    }

    /// Ĩ in `[0, 1]`, (B, 3, H, W).
    pub fn forward(
        &self,
        garment: &Tensor,
        pose: &Tensor,
        agnostic: &Tensor,
        parse: &Tensor,
        theta: &Tensor,
        warper: &TpsWarper,
    ) -> Result<Tensor> {
        let (b, _, h, w) = garment.dims4()?;
        if theta.dims() != [b, crate::geometry::tps::NUM_PARAMS] {
            return Err(Error::Shape(format!("theta {:?} does not match batch {b}", theta.dims())));
        }
        let f = 1 << self.config.levels();
        if h % f != 0 || w % f != 0 {
            return Err(Error::Shape(format!("input {h}×{w} must be divisible by {f}")));
        }
        let person = self.person_input(pose, agnostic, parse)?;
        let (g_skips, g_out) = self.garment.forward(garment)?;
        let (p_skips, p_out) = self.person.forward(&person)?;
        let mut x = self.bottleneck.forward(&Tensor::cat(&[&g_out, &p_out], 1)?)?;
        for (level, (up, block)) in (0..self.config.levels()).rev().zip(&self.up) {
            let warped = warper.warp(&g_skips[level], theta)?;
            x = block.forward(&Tensor::cat(&[&up.forward(&x)?, &warped, &p_skips[level]], 1)?)?;
        }
        Ok(((self.head.forward(&x)?.tanh()? + 1.0)? * 0.5)?)
    }
}

/// One stage of the frozen feature stack.
#[derive(Debug, Clone)]
pub struct Stage {
    pub weight: Tensor,
    pub bias: Tensor,
    /// Halve the resolution before the convolution.
    pub pool: bool,
    pub relu: bool,
}

/// Fixed convolutional feature stack for the perceptual distance.
#[derive(Debug, Clone)]
pub struct PerceptualExtractor {
    pub name: String,
    stages: Vec<Stage>,
}

impl PerceptualExtractor {
    pub const STAGE_WIDTHS: [usize; 5] = [16, 32, 64, 64, 64];

    /// Five 3×3 conv + ReLU stages, pooling before each but the first,
    /// weights drawn from `seed` and never trained.
    pub fn seeded(seed: u64, dtype: DType) -> Result<Self> {
        let store = ParamStore::new(seed, dtype);
        let root = store.root();
        let mut stages = Vec::new();
        let mut c = 3;
        for (i, &w) in Self::STAGE_WIDTHS.iter().enumerate() {
            let s = root.sub(format!("stage{i}"));
            let weight = s.get("weight", (w, c, 3, 3), Init::kaiming(c * 9))?.detach();
            let bias = s.get("bias", w, Init::Zeros)?.detach();
            stages.push(Stage { weight, bias, pool: i > 0, relu: true });
            c = w;
        }
        Ok(Self { name: format!("seeded-conv5-{seed}"), stages })
    }

    pub fn from_stages(name: impl Into<String>, stages: Vec<Stage>) -> Self {
        Self { name: name.into(), stages }
    }

    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut x = x.clone();
        for s in &self.stages {
            if s.pool {
                let (_, _, h, w) = x.dims4()?;
                if h >= 2 && w >= 2 {
                    x = x.avg_pool2d(2)?;
                }
            }
            let k = s.weight.dim(2)?;
            x = crate::nn::conv2d(&x, &s.weight.to_dtype(x.dtype())?, 1, k / 2)?
                .broadcast_add(&s.bias.to_dtype(x.dtype())?.reshape((1, (), 1, 1))?)?;
            if s.relu {
                x = x.relu()?;
            }
            out.push(x.clone());
        }
        Ok(out)
    }

    /// Σ over stages of the mean absolute feature difference.
    pub fn loss(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.dims() != b.dims() {
            return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
        }
        let fa = self.features(a)?;
        let fb = self.features(b)?;
        let mut total: Option<Tensor> = None;
        for (x, y) in fa.iter().zip(&fb) {
            let d = l1(x, y)?;
            total = Some(match total {
                Some(t) => (t + d)?,
                None => d,
            });
        }
        total.ok_or_else(|| Error::Config("perceptual extractor has no stages".into()))
    }
}

#[derive(Debug, Clone)]
pub struct TryOnLoss {
    pub total: Tensor,
    pub l1: Tensor,
    pub perceptual: Tensor,
    pub adversarial: Option<Tensor>,
}

/// `L1 + perceptual + λ_adv · adv`; the adversarial term is omitted when absent.
pub fn tryon_loss(
    generated: &Tensor,
    target: &Tensor,
    adv: Option<&Tensor>,
    lambda_adv: f64,
    extractor: &PerceptualExtractor,
) -> Result<TryOnLoss> {
    let l1 = l1(generated, target)?;
    let perceptual = extractor.loss(generated, target)?;
    let mut total = (&l1 + &perceptual)?;
    if let Some(a) = adv {
        total = (total + (a * lambda_adv)?)?;
    }
    Ok(TryOnLoss { total, l1, perceptual, adversarial: adv.cloned() })
}
