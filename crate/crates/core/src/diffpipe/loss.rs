use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smoothing constant of the Charbonnier loss.
pub const CHARBONNIER_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    Mse,
    /// `mean(sqrt(r² + ε²))`, a smooth L1.
    L1Charbonnier,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::L1Charbonnier => "l1-charbonnier",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "l1-charbonnier" | "charbonnier" => Ok(LossKind::L1Charbonnier),
            other => Err(Error::invalid(format!("unknown loss {other:?}"))),
        }
    }
}

fn check(y_hat: &Tensor, y_ref: &Tensor) -> Result<()> {
    if y_hat.shape() != y_ref.shape() {
        return Err(Error::ShapeMismatch { left: y_hat.shape(), right: y_ref.shape() });
    }
    if y_hat.is_empty() {
        return Err(Error::invalid("loss over empty tensors"));
    }
    Ok(())
}

pub fn loss(kind: LossKind, y_hat: &Tensor, y_ref: &Tensor) -> Result<f64> {
    check(y_hat, y_ref)?;
    let n = y_hat.len() as f64;
    let it = y_hat.data().iter().zip(y_ref.data()).map(|(a, b)| a - b);
    let total: f64 = match kind {
        LossKind::Mse => it.map(|r| r * r).sum(),
        LossKind::L1Charbonnier => it.map(|r| (r * r + CHARBONNIER_EPS * CHARBONNIER_EPS).sqrt()).sum(),
    };
    Ok(total / n)
}

/// Loss value and its gradient with respect to `y_hat`.
pub fn loss_and_grad(kind: LossKind, y_hat: &Tensor, y_ref: &Tensor) -> Result<(f64, Tensor)> {
    let value = loss(kind, y_hat, y_ref)?;
    let n = y_hat.len() as f64;
    let grad: Vec<f64> = y_hat
        .data()
        .iter()
        .zip(y_ref.data())
        .map(|(a, b)| {
            let r = a - b;
            match kind {
                LossKind::Mse => 2.0 * r / n,
                LossKind::L1Charbonnier => r / (r * r + CHARBONNIER_EPS * CHARBONNIER_EPS).sqrt() / n,
            }
        })
        .collect();
    if !value.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((value, Tensor::from_raw(y_hat.shape(), grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{psnr, ColorSpace, Image};
    use crate::tensor::Rng;

    #[test]
    fn identical_inputs() {
        let t = Tensor::random_uniform(&mut Rng::new(1), [1, 3, 4, 4], 0.0, 1.0).unwrap();
        assert_eq!(loss(LossKind::Mse, &t, &t).unwrap(), 0.0);
        assert!((loss(LossKind::L1Charbonnier, &t, &t).unwrap() - CHARBONNIER_EPS).abs() < 1e-18);
    }

    #[test]
    fn uniform_residual() {
        let a = Tensor::full([1, 1, 3, 3], 0.6).unwrap();
        let b = Tensor::full([1, 1, 3, 3], 0.5).unwrap();
        assert!((loss(LossKind::Mse, &a, &b).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn mse_consistent_with_psnr() {
        let mut rng = Rng::new(77);
        let a = Tensor::random_uniform(&mut rng, [1, 1, 8, 8], 0.0, 1.0).unwrap();
        let b = Tensor::random_uniform(&mut rng, [1, 1, 8, 8], 0.0, 1.0).unwrap();
        let mse = loss(LossKind::Mse, &a, &b).unwrap();
        let ia = Image::from_tensor(&a, ColorSpace::Gray).unwrap();
        let ib = Image::from_tensor(&b, ColorSpace::Gray).unwrap();
        assert!((10.0 * (1.0 / mse).log10() - psnr(&ia, &ib).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let mut rng = Rng::new(5);
        let a = Tensor::random_uniform(&mut rng, [1, 1, 2, 3], 0.0, 1.0).unwrap();
        let b = Tensor::random_uniform(&mut rng, [1, 1, 2, 3], 0.0, 1.0).unwrap();
        for kind in [LossKind::Mse, LossKind::L1Charbonnier] {
            let (_, g) = loss_and_grad(kind, &a, &b).unwrap();
            for i in 0..a.len() {
                let h = 1e-6;
                let up = loss(kind, &a.with_value(i, a.data()[i] + h).unwrap(), &b).unwrap();
                let dn = loss(kind, &a.with_value(i, a.data()[i] - h).unwrap(), &b).unwrap();
                assert!(((up - dn) / (2.0 * h) - g.data()[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("mse".parse::<LossKind>().unwrap(), LossKind::Mse);
        assert_eq!("l1-charbonnier".parse::<LossKind>().unwrap(), LossKind::L1Charbonnier);
        assert!("l2".parse::<LossKind>().is_err());
    }
}
