//! Temporal max pooling `[T × d] → [d]`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Tensor, TensorError};

/// Output of [`maxpool_forward`]: pooled vector and, per column, the row that won.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPoolOutput<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// Column-wise maximum; ties resolve to the earliest row.
pub fn maxpool_forward<T: Real>(seq: &Tensor<T>) -> Result<MaxPoolOutput<T>> {
    if seq.rank() != 2 {
        return Err(TensorError::InvalidAxis {
            op: "maxpool_forward",
            axis: 1,
            rank: seq.rank(),
        }
        .into());
    }
    if seq.rows() == 0 {
        return Err(Error::EmptySequence("maxpool input"));
    }
    let d = seq.cols();
    let mut output = seq.row(0).to_vec();
    let mut argmax = alloc::vec![0; d];
    for t in 1..seq.rows() {
        for (j, &v) in seq.row(t).iter().enumerate() {
            if v > output[j] {
                output[j] = v;
                argmax[j] = t;
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::from_vec(&[d], output)?,
        argmax,
    })
}

/// Routes each upstream component to the row recorded in `argmax`.
pub fn maxpool_backward<T: Real>(argmax: &[usize], upstream: &Tensor<T>, rows: usize) -> Result<Tensor<T>> {
    if upstream.len() != argmax.len() {
        return Err(TensorError::ShapeMismatch {
            op: "maxpool_backward",
            left: upstream.shape().to_vec(),
            right: alloc::vec![argmax.len()],
        }
        .into());
    }
    let d = argmax.len();
    let mut grad = Tensor::zeros(&[rows, d]);
    for (j, (&t, &g)) in argmax.iter().zip(upstream.data()).enumerate() {
        grad.data_mut()[t * d + j] = g;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn single_row_is_identity() {
        let seq = Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(maxpool_forward(&seq).unwrap().output.data(), seq.data());
    }

    #[test]
    fn elementwise_max() {
        let seq = Tensor::from_vec(&[2, 2], vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        let out = maxpool_forward(&seq).unwrap();
        assert_eq!(out.output.data(), &[3.0, 5.0]);
        assert_eq!(out.argmax, vec![1, 0]);
    }

    #[test]
    fn ties_route_to_earliest_row() {
        let seq = Tensor::from_vec(&[3, 2], vec![0.0, 2.0, 4.0, 2.0, 4.0, 1.0]).unwrap();
        let out = maxpool_forward(&seq).unwrap();
        assert_eq!(out.argmax, vec![1, 0]);
        let up = Tensor::vector(vec![1.0, 1.0]).unwrap();
        let g = maxpool_backward(&out.argmax, &up, 3).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_sequence_rejected() {
        assert!(maxpool_forward(&Tensor::<f32>::zeros(&[0, 3])).is_err());
    }
}
