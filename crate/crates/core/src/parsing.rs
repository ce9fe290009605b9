//! Human parsing estimation: a U-Net predicting the full 18-class map of the
//! person wearing the target garment.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::dataset::palette::NUM_CLASSES;
use crate::dataset::LabelMap;
use crate::error::{Error, Result};
use crate::nn::layers::{log_softmax, Conv2d, InstanceNorm2d, Upsample2x};
use crate::nn::{argmax_labels, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseNetConfig {
    /// Channels of the first block; each deeper block doubles them.
    pub width: usize,
    pub hd_extra_block: bool,
    /// Pose channels (18 keypoint heatmaps or 27 dense-pose channels).
    pub pose_channels: usize,
}

impl Default for ParseNetConfig {
    fn default() -> Self {
        Self { width: 64, hd_extra_block: false, pose_channels: 18 }
    }
}

impl ParseNetConfig {
    pub fn levels(&self) -> usize {
        if self.hd_extra_block {
            5
        } else {
            4
        }
    }

    pub fn in_channels(&self) -> usize {
        3 + self.pose_channels + NUM_CLASSES
    }

    fn widths(&self) -> Vec<usize> {
        (0..self.levels()).map(|i| self.width << i.min(3)).collect()
    }
}

/// Two rounds of conv 3×3 → instance norm → ReLU.
pub(crate) struct UnetBlock {
    convs: [Conv2d; 2],
    norms: [InstanceNorm2d; 2],
}

impl UnetBlock {
    pub(crate) fn new(s: &Scope, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            convs: [Conv2d::new(&s.sub("conv0"), cin, cout, 3, 1, 1)?, Conv2d::new(&s.sub("conv1"), cout, cout, 3, 1, 1)?],
            norms: [InstanceNorm2d::new(&s.sub("norm0"), cout)?, InstanceNorm2d::new(&s.sub("norm1"), cout)?],
        })
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            x = n.forward(&c.forward(&x)?)?.relu()?;
        }
        Ok(x)
    }
}

pub struct ParseNet {
    pub config: ParseNetConfig,
    down: Vec<UnetBlock>,
    bottleneck: UnetBlock,
    up: Vec<(Upsample2x, UnetBlock)>,
    head: Conv2d,
}

impl ParseNet {
    pub fn new(s: &Scope, config: ParseNetConfig) -> Result<Self> {
        let widths = config.widths();
        let mut down = Vec::new();
        let mut c = config.in_channels();
        for (i, &w) in widths.iter().enumerate() {
            down.push(UnetBlock::new(&s.sub(format!("down{i}")), c, w)?);
            c = w;
        }
        let bottleneck = UnetBlock::new(&s.sub("bottleneck"), c, c)?;
        let mut up = Vec::new();
        for (i, &w) in widths.iter().enumerate().rev() {
            let u = Upsample2x::new(&s.sub(format!("up{i}.upsample")), c, w)?;
            let b = UnetBlock::new(&s.sub(format!("up{i}.block")), 2 * w, w)?;
            up.push((u, b));
            c = w;
        }
        let head = Conv2d::new(&s.sub("head"), c, NUM_CLASSES, 1, 1, 0)?;
        Ok(Self { config, down, bottleneck, up, head })
    }

    /// Logits (B, 18, H, W) from the warped garment (B, 3), pose (B, P) and
    /// masked parse one-hot (B, 18).
    pub fn forward(&self, warped: &Tensor, pose: &Tensor, masked_parse: &Tensor) -> Result<Tensor> {
        let (_, pc, h, w) = pose.dims4()?;
        if pc != self.config.pose_channels {
            return Err(Error::Shape(format!("pose has {pc} channels, configured {}", self.config.pose_channels)));
        }
        if masked_parse.dim(1)? != NUM_CLASSES || warped.dim(1)? != 3 {
            return Err(Error::Shape("parse input needs a 3-channel garment and an 18-channel parse".into()));
        }
        let f = 1 << self.config.levels();
        if h % f != 0 || w % f != 0 {
            return Err(Error::Shape(format!("input {h}×{w} must be divisible by {f}")));
        }
        let mut x = Tensor::cat(&[warped, pose, masked_parse], 1)?;
        let mut skips = Vec::new();
        for block in &self.down {
            let y = block.forward(&x)?;
            x = y.max_pool2d(2)?;
            skips.push(y);
        }
        x = self.bottleneck.forward(&x)?;
        for ((up, block), skip) in self.up.iter().zip(skips.iter().rev()) {
            x = block.forward(&Tensor::cat(&[&up.forward(&x)?, skip], 1)?)?;
        }
        self.head.forward(&x)
    }
}

fn check_labels(labels: &Tensor, classes: usize) -> Result<()> {
    let v: Vec<u32> = labels.flatten_all()?.to_vec1()?;
    if let Some(&bad) = v.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::LabelOutOfRange { value: bad, classes });
    }
    Ok(())
}

/// Mean per-pixel cross-entropy of `logits` (B, C, H, W) against hard labels (B, H, W).
pub fn cross_entropy(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = logits.dims4()?;
    if labels.dims() != [b, h, w] {
        return Err(Error::Shape(format!("labels {:?} vs logits {:?}", labels.dims(), logits.dims())));
    }
    check_labels(labels, c)?;
    let lp = log_softmax(logits, 1)?;
    let picked = lp.gather(&labels.unsqueeze(1)?.contiguous()?, 1)?;
    Ok(picked.mean_all()?.neg()?)
}

pub fn parse_loss(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    if logits.dim(1)? != NUM_CLASSES {
        return Err(Error::Shape(format!("parse logits need {NUM_CLASSES} channels")));
    }
    cross_entropy(logits, labels)
}

/// One-hot maps of the per-pixel argmax; ties go to the lowest class.
pub fn one_hot_parse(logits: &Tensor) -> Result<Tensor> {
    let maps = argmax_labels(logits)?;
    let refs: Vec<&LabelMap> = maps.iter().collect();
    crate::nn::one_hot_batch(&refs, logits.dtype())
}

/// Fraction of pixels whose argmax equals the label.
pub fn pixel_accuracy(logits: &Tensor, labels: &[&LabelMap]) -> Result<f64> {
    let pred = argmax_labels(logits)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, t) in pred.iter().zip(labels) {
        hit += p.data.iter().zip(&t.data).filter(|(a, b)| a == b).count();
        total += t.data.len();
    }
    Ok(hit as f64 / total.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use crate::nn::{gradient_check, one_hot_batch, scalar, ParamStore};

    fn zeros_like_input(cfg: &ParseNetConfig, batch: usize, h: usize, w: usize, dtype: DType) -> Result<[Tensor; 3]> {
        let dev = Device::Cpu;
        Ok([
            Tensor::zeros((batch, 3, h, w), dtype, &dev)?,
            Tensor::zeros((batch, cfg.pose_channels, h, w), dtype, &dev)?,
            Tensor::zeros((batch, NUM_CLASSES, h, w), dtype, &dev)?,
        ])
    }

    #[test]
    fn output_shape_and_determinism() {
        let store = ParamStore::new(0, DType::F32);
        let cfg = ParseNetConfig { width: 4, ..Default::default() };
        let net = ParseNet::new(&store.root(), cfg).unwrap();
        let [c, p, h] = zeros_like_input(&cfg, 2, 32, 16, DType::F32).unwrap();
        let c = (c + 0.3).unwrap();
        let a = net.forward(&c, &p, &h).unwrap();
        assert_eq!(a.dims(), &[2, 18, 32, 16]);
        let b = net.forward(&c, &p, &h).unwrap();
        let (a, b): (Vec<f32>, Vec<f32>) =
            (a.flatten_all().unwrap().to_vec1().unwrap(), b.flatten_all().unwrap().to_vec1().unwrap());
        assert_eq!(a, b);
        let wrong = Tensor::zeros((2, 27, 32, 16), DType::F32, &Device::Cpu).unwrap();
        assert!(net.forward(&c, &wrong, &h).is_err());
    }

    #[test]
    fn loss_values() {
        let dev = Device::Cpu;
        let labels = Tensor::new(&[[[0u32, 5], [17, 9]]], &dev).unwrap();
        let uniform = Tensor::zeros((1, 18, 2, 2), DType::F64, &dev).unwrap();
        assert!((scalar(&parse_loss(&uniform, &labels).unwrap()).unwrap() - 18f64.ln()).abs() < 1e-12);
        let lm = LabelMap { height: 2, width: 2, data: vec![0, 5, 17, 9] };
        let saturated = (one_hot_batch(&[&lm], DType::F64).unwrap() * 100.0).unwrap();
        assert!(scalar(&parse_loss(&saturated, &labels).unwrap()).unwrap() < 1e-6);
        let bad = Tensor::new(&[[[0u32, 18], [1, 1]]], &dev).unwrap();
        assert!(matches!(parse_loss(&uniform, &bad), Err(Error::LabelOutOfRange { value: 18, .. })));
    }

    #[test]
    fn hand_computed_two_by_two() {
        let dev = Device::Cpu;
        let logits: Vec<f64> = (0..18 * 4).map(|i| ((i * 29 % 31) as f64 - 15.0) / 7.0).collect();
        let labels = [3u32, 0, 17, 8];
        let mut want = 0.0;
        for p in 0..4 {
            let col: Vec<f64> = (0..18).map(|k| logits[k * 4 + p]).collect();
            let lse = col.iter().map(|v| v.exp()).sum::<f64>().ln();
            want += lse - col[labels[p] as usize];
        }
        want /= 4.0;
        let t = Tensor::from_vec(logits, (1, 18, 2, 2), &dev).unwrap();
        let l = Tensor::from_vec(labels.to_vec(), (1, 2, 2), &dev).unwrap();
        assert!((scalar(&parse_loss(&t, &l).unwrap()).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn one_hot_ties_and_idempotence() {
        let dev = Device::Cpu;
        let mut v = vec![0f32; 18];
        v[2] = 1.0;
        v[5] = 1.0;
        let t = Tensor::from_vec(v, (1, 18, 1, 1), &dev).unwrap();
        let oh = one_hot_parse(&t).unwrap();
        let ohv: Vec<f32> = oh.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(ohv.iter().position(|&x| x == 1.0), Some(2));
        assert_eq!(ohv.iter().sum::<f32>(), 1.0);
        let again: Vec<f32> = one_hot_parse(&oh).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(again, ohv);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let dev = Device::Cpu;
        let logits: Vec<f64> = (0..2 * 18 * 16 * 12).map(|i| ((i * 7 % 13) as f64 - 6.0) / 5.0).collect();
        let logits = Tensor::from_vec(logits, (2, 18, 16, 12), &dev).unwrap();
        let labels: Vec<u32> = (0..2 * 16 * 12).map(|i| (i * 5 % 18) as u32).collect();
        let labels = Tensor::from_vec(labels, (2, 16, 12), &dev).unwrap();
        let err = gradient_check(&[logits], |t| parse_loss(&t[0], &labels), 1e-5, 37).unwrap();
        assert!(err < 1e-3, "{err}");
    }
}
