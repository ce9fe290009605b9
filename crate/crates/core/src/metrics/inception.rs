//! Inception score over class-probability rows.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const ROW_SUM_TOL: f64 = 1e-4;
pub const STANDARD_SPLITS: usize = 10;

fn check_rows(probs: &DMatrix<f64>) -> Result<()> {
    if probs.nrows() == 0 || probs.ncols() == 0 {
        return Err(Error::Argument("inception score needs a non-empty probability matrix".into()));
    }
    for (i, row) in probs.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::Argument(format!("row {i} is not a probability vector (sum {s})")));
        }
    }
    Ok(())
}

fn score_block(probs: &DMatrix<f64>, rows: std::ops::Range<usize>) -> f64 {
    let n = rows.len() as f64;
    let k = probs.ncols();
    let mut marginal = vec![0.0; k];
    for i in rows.clone() {
        for j in 0..k {
            marginal[j] += probs[(i, j)] / n;
        }
    }
    let mut kl = 0.0;
    for i in rows {
        for j in 0..k {
            let p = probs[(i, j)];
            if p > 0.0 {
                kl += p * (p.ln() - marginal[j].ln());
            }
        }
    }
    (kl / n).exp()
}

/// `exp(mean KL(p(y|x) ‖ p(y)))` over all rows as one split.
pub fn inception_score(probs: &DMatrix<f64>) -> Result<f64> {
    inception_score_with_splits(probs, 1)
}

/// Mean of the per-split scores over `splits` contiguous, near-equal chunks.
pub fn inception_score_with_splits(probs: &DMatrix<f64>, splits: usize) -> Result<f64> {
    check_rows(probs)?;
    let n = probs.nrows();
    if splits == 0 || splits > n {
        return Err(Error::Argument(format!("cannot cut {n} rows into {splits} splits")));
    }
    let total: f64 = (0..splits).map(|s| score_block(probs, s * n / splits..(s + 1) * n / splits)).sum();
    Ok(total / splits as f64)
}

/// Ten splits once every split can hold one row per class, otherwise one.
pub fn default_splits(n: usize, classes: usize) -> usize {
    if n >= STANDARD_SPLITS * classes {
        STANDARD_SPLITS
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_rows_score_one() {
        let p = DMatrix::from_element(7, 4, 0.25);
        assert!((inception_score(&p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn even_one_hot_scores_k() {
        let p = DMatrix::from_fn(12, 3, |i, j| if i % 3 == j { 1.0 } else { 0.0 });
        assert!((inception_score(&p).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn hand_kl_on_six_rows() {
        let rows = [
            [0.7, 0.2, 0.1],
            [0.1, 0.8, 0.1],
            [0.3, 0.3, 0.4],
            [0.05, 0.05, 0.9],
            [0.5, 0.25, 0.25],
            [0.2, 0.6, 0.2],
        ];
        let p = DMatrix::from_fn(6, 3, |i, j| rows[i][j]);
        let pbar: Vec<f64> = (0..3).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / 6.0).collect();
        let mut kl = 0.0;
        for r in &rows {
            kl += r[0] * (r[0] / pbar[0]).ln() + r[1] * (r[1] / pbar[1]).ln() + r[2] * (r[2] / pbar[2]).ln();
        }
        let want = (kl / 6.0).exp();
        assert!((inception_score(&p).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn splits_average_block_scores() {
        let p = DMatrix::from_fn(20, 2, |i, j| if (i < 10) == (j == 0) { 1.0 } else { 0.0 });
        // First half all class 0, second half all class 1: every split is single-class.
        assert!((inception_score_with_splits(&p, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!((inception_score(&p).unwrap() - 2.0).abs() < 1e-12);
        assert!(inception_score_with_splits(&p, 21).is_err());
        assert_eq!(default_splits(100, 10), 10);
        assert_eq!(default_splits(99, 10), 1);
    }

    #[test]
    fn rejects_non_probability_rows() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.6, 0.6]);
        assert!(inception_score(&p).is_err());
    }

    proptest! {
        #[test]
        fn bounded_by_one_and_k(raw in proptest::collection::vec(0.0f64..1.0, 5 * 4)) {
            let p = DMatrix::from_fn(5, 4, |i, j| raw[i * 4 + j] + 1e-3);
            let sums: Vec<f64> = (0..5).map(|i| p.row(i).sum()).collect();
            let p = DMatrix::from_fn(5, 4, |i, j| p[(i, j)] / sums[i]);
            let s = inception_score(&p).unwrap();
            prop_assert!(s >= 1.0 - 1e-12 && s <= 4.0 + 1e-12);
        }
    }
}
