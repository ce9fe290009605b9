//! Windowed structural similarity.

use crate::dataset::RgbImage;
use crate::error::{Error, Result};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;

fn gaussian() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable Gaussian filter over every fully-contained window.
fn filter(plane: &[f64], h: usize, w: usize, g: &[f64; WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|k| g[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over valid 11×11 windows and channels, dynamic range 1.
pub fn ssim_planes(a: &[f64], b: &[f64], channels: usize, h: usize, w: usize) -> Result<f64> {
    if a.len() != b.len() || a.len() != channels * h * w {
        return Err(Error::Shape(format!("ssim inputs differ: {} vs {} values", a.len(), b.len())));
    }
    if h < WINDOW || w < WINDOW {
        return Err(Error::Shape(format!("ssim needs at least {WINDOW}×{WINDOW} pixels, got {h}×{w}")));
    }
    let g = gaussian();
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let n = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..channels {
        let x = &a[c * n..(c + 1) * n];
        let y = &b[c * n..(c + 1) * n];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let (mx, my) = (filter(x, h, w, &g), filter(y, h, w, &g));
        let (sxx, syy, sxy) = (filter(&xx, h, w, &g), filter(&yy, h, w, &g), filter(&xy, h, w, &g));
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.resolution() != b.resolution() {
        return Err(Error::Shape(format!("ssim images differ: {:?} vs {:?}", a.resolution(), b.resolution())));
    }
    let pa: Vec<f64> = a.to_chw().into_iter().map(f64::from).collect();
    let pb: Vec<f64> = b.to_chw().into_iter().map(f64::from).collect();
    ssim_planes(&pa, &pb, 3, a.height, a.width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Resolution;
    use proptest::prelude::*;

    fn noisy(res: Resolution, seed: u32) -> RgbImage {
        let mut img = RgbImage::filled(res, [0.0; 3]);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i as u32).wrapping_mul(2_654_435_761).wrapping_add(seed) % 1000) as f32 / 1000.0;
        }
        img
    }

    #[test]
    fn identical_images_score_one() {
        let img = noisy(Resolution::new(32, 24), 1);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_images_closed_form() {
        let res = Resolution::new(16, 12);
        let a = RgbImage::filled(res, [0.5; 3]);
        let b = RgbImage::filled(res, [0.7; 3]);
        let c1 = K1 * K1;
        let want = (2.0 * 0.5 * 0.7 + c1) / (0.25 + 0.49 + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn rejects_small_or_mismatched() {
        let a = RgbImage::filled(Resolution::new(10, 12), [0.0; 3]);
        assert!(ssim(&a, &a).is_err());
        let b = RgbImage::filled(Resolution::new(12, 12), [0.0; 3]);
        let c = RgbImage::filled(Resolution::new(12, 13), [0.0; 3]);
        assert!(ssim(&b, &c).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(s1 in 0u32..1000, s2 in 0u32..1000) {
            let res = Resolution::new(14, 12);
            let (a, b) = (noisy(res, s1), noisy(res, s2 + 1000));
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab <= 1.0 + 1e-12 && ab >= -1.0);
        }
    }
}
