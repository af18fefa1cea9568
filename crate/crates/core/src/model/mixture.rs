//! Availability-masked mixture of expert similarities.
//!
//! For caption `i` and video `j` with available modalities `D_j`:
//!
//! ```text
//! S_ij = Σ_{k∈D_j} w_ik · s_ijk / Σ_{k∈D_j} w_ik
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::data::AvailabilityMask;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Tensor, TensorError};

/// Weights renormalized over the available experts; masked entries are zero.
pub fn renormalize<T: Real>(weights: &[T], mask: &AvailabilityMask) -> Vec<T> {
    let total: T = mask.available().map(|k| weights[k]).sum();
    weights
        .iter()
        .enumerate()
        .map(|(k, &w)| if mask.is_available(k) { w / total } else { T::zero() })
        .collect()
}

fn check<T: Real>(
    weights: &Tensor<T>,
    expert_scores: &[Tensor<T>],
    masks: &[AvailabilityMask],
) -> Result<(usize, usize, usize)> {
    let (q, n) = (weights.rows(), weights.cols());
    let c = masks.len();
    if expert_scores.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "mixture",
            left: vec![n],
            right: vec![expert_scores.len()],
        }
        .into());
    }
    for e in expert_scores {
        if e.shape() != [q, c] {
            return Err(TensorError::ShapeMismatch {
                op: "mixture",
                left: e.shape().to_vec(),
                right: vec![q, c],
            }
            .into());
        }
    }
    for (j, m) in masks.iter().enumerate() {
        if m.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "mixture mask",
                left: vec![m.len()],
                right: vec![n],
            }
            .into());
        }
        if m.count() == 0 {
            return Err(Error::NoAvailableModality(alloc::format!("column {j}")));
        }
    }
    Ok((q, n, c))
}

/// `weights: [Q × N]`, `expert_scores[k]: [Q × C]`, one mask per column.
pub fn mixture_forward<T: Real>(
    weights: &Tensor<T>,
    expert_scores: &[Tensor<T>],
    masks: &[AvailabilityMask],
) -> Result<Tensor<T>> {
    let (q, _, c) = check(weights, expert_scores, masks)?;
    let mut out = Tensor::zeros(&[q, c]);
    for i in 0..q {
        let w = weights.row(i);
        for (j, mask) in masks.iter().enumerate() {
            let mut num = T::zero();
            let mut den = T::zero();
            for k in mask.available() {
                num += w[k] * expert_scores[k].get2(i, j);
                den += w[k];
            }
            out.set2(i, j, num / den);
        }
    }
    Ok(out)
}

/// Gradients of the mixture w.r.t. the (un-renormalized) weights and the
/// expert scores. Entries for masked experts are exactly zero.
pub fn mixture_backward<T: Real>(
    weights: &Tensor<T>,
    expert_scores: &[Tensor<T>],
    masks: &[AvailabilityMask],
    scores: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let (q, n, c) = check(weights, expert_scores, masks)?;
    if upstream.shape() != [q, c] || scores.shape() != [q, c] {
        return Err(TensorError::ShapeMismatch {
            op: "mixture_backward",
            left: upstream.shape().to_vec(),
            right: vec![q, c],
        }
        .into());
    }
    let mut d_w = Tensor::zeros(&[q, n]);
    let mut d_e: Vec<Tensor<T>> = (0..n).map(|_| Tensor::zeros(&[q, c])).collect();
    for i in 0..q {
        let w = weights.row(i);
        for (j, mask) in masks.iter().enumerate() {
            let g = upstream.get2(i, j);
            if g == T::zero() {
                continue;
            }
            let den: T = mask.available().map(|k| w[k]).sum();
            let s = scores.get2(i, j);
            for k in mask.available() {
                d_e[k].set2(i, j, g * w[k] / den);
                let cur = d_w.get2(i, k);
                d_w.set2(i, k, cur + g * (expert_scores[k].get2(i, j) - s) / den);
            }
        }
    }
    Ok((d_w, d_e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: &[f64], s: &[f64], mask: &[bool]) -> f64 {
        let weights = Tensor::from_vec(&[1, w.len()], w.to_vec()).unwrap();
        let es: Vec<Tensor<f64>> = s.iter().map(|v| Tensor::from_vec(&[1, 1], vec![*v]).unwrap()).collect();
        mixture_forward(&weights, &es, &[AvailabilityMask(mask.to_vec())])
            .unwrap()
            .data()[0]
    }

    #[test]
    fn full_availability_is_plain_weighted_sum() {
        assert!((single(&[0.25, 0.75], &[0.8, 0.4], &[true, true]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singleton_set_takes_that_expert() {
        assert!((single(&[0.25, 0.75], &[0.8, 0.4], &[true, false]) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn renormalized_weights_sum_to_one() {
        let w = renormalize(&[0.2, 0.3, 0.5], &AvailabilityMask(vec![true, false, true]));
        assert_eq!(w[1], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((w[0] - 0.2 / 0.7).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_rejected() {
        let weights = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let es = vec![Tensor::from_vec(&[1, 1], vec![0.5]).unwrap()];
        assert!(mixture_forward(&weights, &es, &[AvailabilityMask(vec![false])]).is_err());
    }

    #[test]
    fn masked_expert_gets_zero_gradient() {
        let weights = Tensor::from_vec(&[1, 2], vec![0.4, 0.6]).unwrap();
        let es = vec![
            Tensor::from_vec(&[1, 1], vec![0.3]).unwrap(),
            Tensor::from_vec(&[1, 1], vec![-0.2]).unwrap(),
        ];
        let masks = [AvailabilityMask(vec![true, false])];
        let s = mixture_forward(&weights, &es, &masks).unwrap();
        let (d_w, d_e) = mixture_backward(&weights, &es, &masks, &s, &Tensor::from_vec(&[1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(d_w.data()[1], 0.0);
        assert_eq!(d_e[1].data()[0], 0.0);
        // Singleton set: S = s_0 regardless of w_0.
        assert_eq!(d_w.data()[0], 0.0);
        assert_eq!(d_e[0].data()[0], 1.0);
    }
}
