//! Distribution distances between feature sets (rows are samples).

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const KID_SUBSETS: usize = 10;
pub const KID_SUBSET_SIZE: usize = 1000;

fn check(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.nrows() < 2 || b.nrows() < 2 {
        return Err(Error::Argument(format!("need at least 2 samples per side, got {} and {}", a.nrows(), b.nrows())));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!("feature dims differ: {} vs {}", a.ncols(), b.ncols())));
    }
    Ok(())
}

/// Mean vector and unbiased covariance.
pub fn moments(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let centered = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1.0);
    (mean, cov)
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `tr (Σa Σb)^{1/2}`, computed as the trace of `(√Σa Σb √Σa)^{1/2}`.
pub fn trace_sqrt_product(sa: &DMatrix<f64>, sb: &DMatrix<f64>) -> f64 {
    let ra = sqrtm_psd(sa);
    let inner = &ra * sb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    inner.symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).sum()
}

pub fn frechet_distance(mu_a: &DVector<f64>, sa: &DMatrix<f64>, mu_b: &DVector<f64>, sb: &DMatrix<f64>) -> f64 {
    let diff = mu_a - mu_b;
    let d = diff.dot(&diff) + sa.trace() + sb.trace() - 2.0 * trace_sqrt_product(sa, sb);
    d.max(0.0)
}

pub fn fid(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    check(a, b)?;
    let (ma, sa) = moments(a);
    let (mb, sb) = moments(b);
    Ok(frechet_distance(&ma, &sa, &mb, &sb))
}

/// Cubic polynomial kernel `(xᵀy / d + 1)³`.
pub fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / d + 1.0).powi(3)
}

/// Unbiased squared MMD between two samples under [`poly_kernel`].
pub fn mmd2_unbiased(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let (m, n) = (x.len() as f64, y.len() as f64);
    let within = |s: &[Vec<f64>]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i != j {
                    acc += poly_kernel(&s[i], &s[j]);
                }
            }
        }
        acc
    };
    let mut cross = 0.0;
    for a in x {
        for b in y {
            cross += poly_kernel(a, b);
        }
    }
    within(x) / (m * (m - 1.0)) + within(y) / (n * (n - 1.0)) - 2.0 * cross / (m * n)
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

/// Mean unbiased MMD² over [`KID_SUBSETS`] random subsets of size
/// `min(1000, n)` drawn without replacement from each side.
pub fn kid(a: &DMatrix<f64>, b: &DMatrix<f64>, seed: u64) -> Result<f64> {
    check(a, b)?;
    let (ra, rb) = (rows(a), rows(b));
    let m = KID_SUBSET_SIZE.min(ra.len()).min(rb.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..KID_SUBSETS {
        let sa: Vec<Vec<f64>> = sample(&mut rng, ra.len(), m).iter().map(|i| ra[i].clone()).collect();
        let sb: Vec<Vec<f64>> = sample(&mut rng, rb.len(), m).iter().map(|i| rb[i].clone()).collect();
        total += mmd2_unbiased(&sa, &sb);
    }
    Ok(total / KID_SUBSETS as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian(n: usize, d: usize, mean: f64, scale: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        DMatrix::from_fn(n, d, |_, j| mean + scale * (1.0 + j as f64 * 0.1) * normal.sample(&mut rng))
    }

    #[test]
    fn identical_sets_have_zero_fid() {
        let a = gaussian(200, 6, 0.0, 1.0, 1);
        assert!(fid(&a, &a).unwrap() <= 1e-6);
    }

    #[test]
    fn mean_offset_gives_squared_norm() {
        let a = gaussian(300, 4, 0.0, 1.0, 2);
        let v = [0.5, -1.0, 2.0, 0.25];
        let b = DMatrix::from_fn(300, 4, |i, j| a[(i, j)] + v[j]);
        let want: f64 = v.iter().map(|x| x * x).sum();
        assert!((fid(&a, &b).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn two_dimensional_closed_form() {
        let a = gaussian(500, 2, 0.3, 1.0, 3);
        let b = gaussian(500, 2, -0.2, 0.6, 4);
        let (ma, sa) = moments(&a);
        let (mb, sb) = moments(&b);
        // For 2×2 matrices with positive eigenvalues, tr √M = √(tr M + 2√det M).
        let prod = &sa * &sb;
        let tr_sqrt = (prod.trace() + 2.0 * prod.determinant().sqrt()).sqrt();
        let want = (&ma - &mb).norm_squared() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
        assert!((fid(&a, &b).unwrap() - want).abs() < 1e-8);
    }

    #[test]
    fn fid_symmetric_and_rotation_invariant() {
        let a = gaussian(120, 3, 0.0, 1.0, 5);
        let b = gaussian(120, 3, 0.4, 0.8, 6);
        let ab = fid(&a, &b).unwrap();
        assert!((ab - fid(&b, &a).unwrap()).abs() < 1e-9);
        let (c, s) = (0.6f64, 0.8f64);
        let rot = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        assert!((fid(&(&a * &rot), &(&b * &rot)).unwrap() - ab).abs() < 1e-9);
    }

    #[test]
    fn fid_rejects_degenerate_inputs() {
        let a = gaussian(1, 3, 0.0, 1.0, 7);
        let b = gaussian(5, 3, 0.0, 1.0, 8);
        assert!(fid(&a, &b).is_err());
        assert!(fid(&b, &gaussian(5, 2, 0.0, 1.0, 9)).is_err());
    }

    #[test]
    fn kernel_on_orthogonal_vectors() {
        assert_eq!(poly_kernel(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
    }

    #[test]
    fn mmd_matches_brute_force_double_sum() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0 + 0.01 * i as f64, 0.0]).collect();
        let y: Vec<Vec<f64>> = (0..10).map(|i| vec![-1.0, 2.0 + 0.01 * i as f64]).collect();
        let k = |a: &Vec<f64>, b: &Vec<f64>| ((a[0] * b[0] + a[1] * b[1]) / 2.0 + 1.0).powi(3);
        let mut xx = 0.0;
        let mut yy = 0.0;
        let mut xy = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    xx += k(&x[i], &x[j]);
                    yy += k(&y[i], &y[j]);
                }
                xy += k(&x[i], &y[j]);
            }
        }
        let want = xx / 90.0 + yy / 90.0 - 2.0 * xy / 100.0;
        let got = mmd2_unbiased(&x, &y);
        assert!((got - want).abs() < 1e-9 && got > 0.0);
        let a = DMatrix::from_fn(10, 2, |i, j| x[i][j]);
        let b = DMatrix::from_fn(10, 2, |i, j| y[i][j]);
        assert!((kid(&a, &b, 0).unwrap() - want).abs() < 1e-9);
    }

    fn unit_rows(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut x = gaussian(n, d, 0.0, 1.0, seed);
        for mut r in x.row_iter_mut() {
            let norm = r.norm();
            r /= norm;
        }
        x
    }

    // Features on the unit sphere, as emitted by the default embedding backend.
    #[test]
    fn kid_same_distribution_is_near_zero() {
        let mut worst = 0f64;
        for s in 0..5 {
            let a = unit_rows(100, 64, 100 + s);
            let b = unit_rows(100, 64, 200 + s);
            worst = worst.max(kid(&a, &b, s).unwrap().abs());
            worst = worst.max(kid(&a, &a, s).unwrap().abs());
        }
        assert!(worst <= 0.01, "{worst}");
    }

    #[test]
    fn kid_is_unbiased_over_resamples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..200)
            .map(|_| {
                let (s1, s2) = (rng.random::<u64>(), rng.random::<u64>());
                let a = gaussian(20, 3, 0.0, 1.0, s1);
                let b = gaussian(20, 3, 0.0, 1.0, s2);
                mmd2_unbiased(&rows(&a), &rows(&b))
            })
            .collect();
        let mean = values.iter().sum::<f64>() / 200.0;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 199.0;
        let se = (var / 200.0).sqrt();
        assert!(mean.abs() <= 2.0 * se, "mean {mean} se {se}");
    }
}
