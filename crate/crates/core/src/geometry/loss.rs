//! Warp objective: L1 to the garment worn by the target person plus a
//! second-order smoothness penalty on the anchor lattice.

use candle_core::Tensor;

use super::tps::{LATTICE, NUM_PARAMS};
use crate::error::{Error, Result};
use crate::nn::layers::l1;

pub const LAMBDA_CONST: f64 = 0.01;

/// Loss value with its components.
#[derive(Debug, Clone)]
pub struct WarpLoss {
    pub total: Tensor,
    pub l1: Tensor,
    pub constraint: Tensor,
}

fn second_differences(a: &Tensor, dim: usize) -> Result<Tensor> {
    let n = LATTICE - 2;
    let mid = a.narrow(dim, 1, n)?;
    let lo = a.narrow(dim, 0, n)?;
    let hi = a.narrow(dim, 2, n)?;
    Ok(((mid * 2.0)? - lo - hi)?.sqr()?.sum_all()?)
}

/// Second-order constraint of every row of `theta` (B, 50), averaged over the batch.
pub fn constraint_tensor(theta: &Tensor) -> Result<Tensor> {
    let (b, p) = theta.dims2()?;
    if p != NUM_PARAMS {
        return Err(Error::Shape(format!("theta has {p} columns, expected {NUM_PARAMS}")));
    }
    // The regular lattice is affine, so its second differences vanish and
    // the offsets alone determine the penalty.
    let a = theta.reshape((b, 2, LATTICE, LATTICE))?;
    let total = (second_differences(&a, 3)? + second_differences(&a, 2)?)?;
    Ok((total / b as f64)?)
}

pub fn warp_loss(warped: &Tensor, target: &Tensor, theta: &Tensor, lambda_const: f64) -> Result<WarpLoss> {
    if warped.dims() != target.dims() {
        return Err(Error::Shape(format!("warped {:?} vs target {:?}", warped.dims(), target.dims())));
    }
    let l1 = l1(warped, target)?;
    let constraint = constraint_tensor(theta)?;
    let total = (&l1 + (&constraint * lambda_const)?)?;
    Ok(WarpLoss { total, l1, constraint })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tps::{second_order_constraint, TpsParams};
    use crate::nn::scalar;
    use candle_core::{DType, Device};

    #[test]
    fn matches_scalar_constraint() {
        let mut p = TpsParams::zero();
        p.set(2, 2, 0.1, -0.05);
        p.set(0, 4, 0.02, 0.3);
        let mut q = TpsParams::zero();
        q.set(1, 3, -0.2, 0.0);
        let rows: Vec<f32> = p.offsets.iter().chain(&q.offsets).copied().collect();
        let theta = Tensor::from_vec(rows, (2, NUM_PARAMS), &Device::Cpu).unwrap();
        let got = scalar(&constraint_tensor(&theta).unwrap()).unwrap();
        let want = (second_order_constraint(&p) + second_order_constraint(&q)) / 2.0;
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn identity_and_offset_cases() {
        let dev = Device::Cpu;
        let c = Tensor::rand(0f32, 1.0, (1, 3, 8, 6), &dev).unwrap();
        let theta = Tensor::zeros((1, NUM_PARAMS), DType::F32, &dev).unwrap();
        assert_eq!(scalar(&warp_loss(&c, &c, &theta, LAMBDA_CONST).unwrap().total).unwrap(), 0.0);
        let shifted = (&c + 0.5).unwrap();
        let v = scalar(&warp_loss(&shifted, &c, &theta, LAMBDA_CONST).unwrap().total).unwrap();
        assert!((v - 0.5).abs() < 1e-6);
        let other = Tensor::zeros((1, 3, 8, 5), DType::F32, &dev).unwrap();
        assert!(warp_loss(&c, &other, &theta, LAMBDA_CONST).is_err());
    }
}
