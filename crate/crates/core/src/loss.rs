//! Bidirectional max-margin ranking loss over a batch similarity matrix.
//!
//! ```text
//! l = 1/B · Σ_i Σ_{j≠i} [ max(0, m + S_ij − S_ii) + max(0, m + S_ji − S_ii) ]
//! ```

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossConfig {
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { margin: 0.2 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin.is_finite() && self.margin >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig("margin must be >= 0"))
        }
    }
}

fn square<T: Real>(s: &Tensor<T>) -> Result<usize> {
    if s.rank() != 2 || s.rows() != s.cols() {
        return Err(Error::NotSquare {
            rows: s.rows(),
            cols: s.cols(),
        });
    }
    Ok(s.rows())
}

pub fn ranking_loss<T: Real>(s: &Tensor<T>, cfg: &LossConfig) -> Result<T> {
    cfg.validate()?;
    let b = square(s)?;
    let m = T::lit(cfg.margin);
    let mut total = T::zero();
    for i in 0..b {
        let diag = s.get2(i, i);
        for j in (0..b).filter(|&j| j != i) {
            total += (m + s.get2(i, j) - diag).max(T::zero());
            total += (m + s.get2(j, i) - diag).max(T::zero());
        }
    }
    Ok(total / T::lit(b as f64))
}

/// Subgradient of [`ranking_loss`]; a hinge exactly at its kink contributes 0.
pub fn ranking_loss_grad<T: Real>(s: &Tensor<T>, cfg: &LossConfig) -> Result<Tensor<T>> {
    cfg.validate()?;
    let b = square(s)?;
    let m = T::lit(cfg.margin);
    let unit = T::one() / T::lit(b as f64);
    let mut g = Tensor::zeros(&[b, b]);
    for i in 0..b {
        let diag = s.get2(i, i);
        for j in (0..b).filter(|&j| j != i) {
            for (r, c) in [(i, j), (j, i)] {
                if m + s.get2(r, c) - diag > T::zero() {
                    let cur = g.get2(r, c);
                    g.set2(r, c, cur + unit);
                    let cur = g.get2(i, i);
                    g.set2(i, i, cur - unit);
                }
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init;
    use alloc::vec;
    use proptest::prelude::*;

    fn example() -> Tensor<f64> {
        Tensor::from_vec(&[2, 2], vec![0.5, 0.6, 0.4, 0.7]).unwrap()
    }

    #[test]
    fn single_pair_has_zero_loss() {
        let s = Tensor::from_vec(&[1, 1], vec![0.3]).unwrap();
        assert_eq!(ranking_loss(&s, &LossConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_two_by_two() {
        // i=1: max(0, .2+.6−.5)=.3, max(0, .2+.4−.5)=.1
        // i=2: max(0, .2+.4−.7)=0,  max(0, .2+.6−.7)=.1
        let l = ranking_loss(&example(), &LossConfig::default()).unwrap();
        assert!((l - 0.25).abs() < 1e-12);
        let g = ranking_loss_grad(&example(), &LossConfig::default()).unwrap();
        assert!((g.get2(0, 0) + 1.0).abs() < 1e-12);
        assert!((g.get2(1, 1) + 0.5).abs() < 1e-12);
        assert!((g.get2(0, 1) - 1.0).abs() < 1e-12);
        assert!((g.get2(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dominant_diagonal_is_zero_loss_and_grad() {
        let s = Tensor::from_vec(&[3, 3], vec![0.9, 0.1, 0.0, 0.2, 0.8, 0.3, -0.1, 0.5, 0.95]).unwrap();
        assert_eq!(ranking_loss(&s, &LossConfig::default()).unwrap(), 0.0);
        assert_eq!(ranking_loss_grad(&s, &LossConfig::default()).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn hinge_kink_contributes_nothing() {
        // m + S_01 − S_00 = 0 exactly.
        let s = Tensor::from_vec(&[2, 2], vec![0.5, 0.25, -1.0, 2.0]).unwrap();
        let g = ranking_loss_grad(&s, &LossConfig { margin: 0.25 }).unwrap();
        assert_eq!(g.get2(0, 1), 0.0);
    }

    #[test]
    fn non_square_rejected() {
        let s = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(ranking_loss(&s, &LossConfig::default()), Err(Error::NotSquare { .. })));
        assert!(ranking_loss_grad(&s, &LossConfig::default()).is_err());
        assert!(ranking_loss(&example(), &LossConfig { margin: -1.0 }).is_err());
    }

    proptest! {
        #[test]
        fn invariants(seed in 0u64..200, b in 1usize..8, shift in -3.0f64..3.0) {
            let s: Tensor<f64> = init::uniform(&mut init::rng(seed), &[b, b], -1.0, 1.0);
            let cfg = LossConfig::default();
            let l = ranking_loss(&s, &cfg).unwrap();
            prop_assert!(l >= 0.0);
            let mut shifted = s.clone();
            shifted.data_mut().iter_mut().for_each(|v| *v += shift);
            prop_assert!((ranking_loss(&shifted, &cfg).unwrap() - l).abs() < 1e-12);
            prop_assert!((ranking_loss(&s.transpose().unwrap(), &cfg).unwrap() - l).abs() < 1e-12);
            let g = ranking_loss_grad(&s, &cfg).unwrap();
            for i in 0..b {
                for j in 0..b {
                    if i == j { prop_assert!(g.get2(i, j) <= 0.0) } else { prop_assert!(g.get2(i, j) >= 0.0) }
                }
            }
        }
    }
}
