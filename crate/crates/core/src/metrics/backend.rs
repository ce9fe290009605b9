//! Feature extractors used by the distribution metrics.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::dataset::RgbImage;
use crate::error::{Error, Result};

pub trait EmbeddingBackend {
    fn name(&self) -> &str;
    /// Hex digest pinning the exact weights.
    fn hash(&self) -> &str;
    fn feature_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// One feature row per image.
    fn embed(&self, images: &[&RgbImage]) -> Result<DMatrix<f64>>;
    /// One probability row per image.
    fn classify(&self, images: &[&RgbImage]) -> Result<DMatrix<f64>>;
}

const IN_H: usize = 32;
const IN_W: usize = 24;
const C1: usize = 16;
const C2: usize = 32;
pub const SEEDED_DIM: usize = 2 * C2;
pub const SEEDED_CLASSES: usize = 10;

struct ConvLayer {
    cin: usize,
    cout: usize,
    weight: Vec<f64>, // (cout, cin, 3, 3)
    bias: Vec<f64>,
}

impl ConvLayer {
    fn seeded(rng: &mut ChaCha8Rng, cin: usize, cout: usize) -> Self {
        let bound = (6.0 / (cin * 9) as f64).sqrt();
        let weight = (0..cout * cin * 9).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = (0..cout).map(|_| rng.random_range(-0.1..0.1)).collect();
        Self { cin, cout, weight, bias }
    }

    /// 3×3, stride 1, zero padding 1, followed by ReLU.
    fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cout * h * w];
        for o in 0..self.cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = self.bias[o];
                    for i in 0..self.cin {
                        for ky in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                acc += self.weight[((o * self.cin + i) * 3 + ky) * 3 + kx]
                                    * x[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(o * h + y) * w + xx] = acc.max(0.0);
                }
            }
        }
        out
    }
}

fn avg_pool2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let at = |dy: usize, dx: usize| x[(ch * h + 2 * y + dy) * w + 2 * xx + dx];
                out[(ch * oh + y) * ow + xx] = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0;
            }
        }
    }
    out
}

/// Box-filter resample to `h × w`, CHW output in f64.
pub fn area_resize(img: &RgbImage, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; 3 * h * w];
    let (sh, sw) = (img.height as f64 / h as f64, img.width as f64 / w as f64);
    for y in 0..h {
        let y0 = (y as f64 * sh).floor() as usize;
        let y1 = (((y + 1) as f64 * sh).ceil() as usize).clamp(y0 + 1, img.height);
        for x in 0..w {
            let x0 = (x as f64 * sw).floor() as usize;
            let x1 = (((x + 1) as f64 * sw).ceil() as usize).clamp(x0 + 1, img.width);
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            for c in 0..3 {
                let mut acc = 0.0;
                for sy in y0..y1 {
                    for sx in x0..x1 {
                        acc += f64::from(img.data[(sy * img.width + sx) * 3 + c]);
                    }
                }
                out[(c * h + y) * w + x] = acc / n;
            }
        }
    }
    out
}

/// Small randomly initialised conv net; stands in for a pretrained classifier
/// when no such weights are available. Features are L2-normalised.
pub struct SeededConvBackend {
    name: String,
    hash: String,
    conv1: ConvLayer,
    conv2: ConvLayer,
    head: Vec<f64>, // (SEEDED_CLASSES, SEEDED_DIM)
}

impl SeededConvBackend {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = ConvLayer::seeded(&mut rng, 3, C1);
        let conv2 = ConvLayer::seeded(&mut rng, C1, C2);
        let bound = (6.0 / SEEDED_DIM as f64).sqrt() * 4.0;
        let head = (0..SEEDED_CLASSES * SEEDED_DIM).map(|_| rng.random_range(-bound..bound)).collect();
        let name = format!("seeded-conv2-{IN_H}x{IN_W}-d{SEEDED_DIM}-k{SEEDED_CLASSES}-seed{seed}");
        let mut hasher = Sha256::new();
        hasher.update(name.as_bytes());
        for block in [&conv1.weight, &conv1.bias, &conv2.weight, &conv2.bias, &head] {
            for v in block.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        let hash = hex::encode(hasher.finalize());
        Self { name, hash, conv1, conv2, head }
    }

    fn features(&self, img: &RgbImage) -> Vec<f64> {
        let x = area_resize(img, IN_H, IN_W);
        let x = self.conv1.forward(&x, IN_H, IN_W);
        let x = avg_pool2(&x, C1, IN_H, IN_W);
        let (h, w) = (IN_H / 2, IN_W / 2);
        let x = self.conv2.forward(&x, h, w);
        let n = (h * w) as f64;
        let mut f = Vec::with_capacity(SEEDED_DIM);
        for c in 0..C2 {
            let plane = &x[c * h * w..(c + 1) * h * w];
            f.push(plane.iter().sum::<f64>() / n);
        }
        for c in 0..C2 {
            let plane = &x[c * h * w..(c + 1) * h * w];
            f.push(plane.iter().copied().fold(0.0, f64::max));
        }
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            f.iter_mut().for_each(|v| *v /= norm);
        }
        f
    }
}

impl Default for SeededConvBackend {
    fn default() -> Self {
        Self::new(0)
    }
}

impl EmbeddingBackend for SeededConvBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn hash(&self) -> &str {
        &self.hash
    }

    fn feature_dim(&self) -> usize {
        SEEDED_DIM
    }

    fn num_classes(&self) -> usize {
        SEEDED_CLASSES
    }

    fn embed(&self, images: &[&RgbImage]) -> Result<DMatrix<f64>> {
        if images.iter().any(|i| i.height < 2 || i.width < 2) {
            return Err(Error::Shape("backend needs images of at least 2×2 pixels".into()));
        }
        let rows: Vec<Vec<f64>> = images.iter().map(|i| self.features(i)).collect();
        Ok(DMatrix::from_fn(rows.len(), SEEDED_DIM, |i, j| rows[i][j]))
    }

    fn classify(&self, images: &[&RgbImage]) -> Result<DMatrix<f64>> {
        let f = self.embed(images)?;
        let mut p = DMatrix::zeros(f.nrows(), SEEDED_CLASSES);
        for i in 0..f.nrows() {
            let logits: Vec<f64> = (0..SEEDED_CLASSES)
                .map(|k| (0..SEEDED_DIM).map(|j| self.head[k * SEEDED_DIM + j] * f[(i, j)]).sum())
                .collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for k in 0..SEEDED_CLASSES {
                p[(i, k)] = (logits[k] - m).exp() / z;
            }
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Resolution;

    fn img(seed: u32) -> RgbImage {
        let mut im = RgbImage::filled(Resolution::new(64, 48), [0.0; 3]);
        for (i, v) in im.data.iter_mut().enumerate() {
            *v = ((i as u32 / 7).wrapping_mul(2_654_435_761).wrapping_add(seed) % 997) as f32 / 997.0;
        }
        im
    }

    #[test]
    fn deterministic_and_pinned() {
        let (a, b) = (SeededConvBackend::new(3), SeededConvBackend::new(3));
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), SeededConvBackend::new(4).hash());
        let ims = [img(1), img(2)];
        let refs: Vec<&RgbImage> = ims.iter().collect();
        assert_eq!(a.embed(&refs).unwrap(), b.embed(&refs).unwrap());
        let f = a.embed(&refs).unwrap();
        assert_eq!(f.ncols(), SEEDED_DIM);
        for r in f.row_iter() {
            assert!((r.norm() - 1.0).abs() < 1e-12);
        }
        let p = a.classify(&refs).unwrap();
        for r in p.row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn area_resize_preserves_mean_on_even_factor() {
        let im = img(5);
        let small = area_resize(&im, 32, 24);
        for c in 0..3 {
            let full: f64 = (0..64 * 48).map(|p| f64::from(im.data[p * 3 + c])).sum::<f64>() / (64.0 * 48.0);
            let s: f64 = small[c * 32 * 24..(c + 1) * 32 * 24].iter().sum::<f64>() / (32.0 * 24.0);
            assert!((full - s).abs() < 1e-9);
        }
    }
}
