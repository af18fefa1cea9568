//! Expert-weight head: one gate vector per expert, logits `⟨h(X), a_i⟩`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::init;
use crate::param::Parameter;
use crate::real::Real;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct GateHead<T> {
    /// `[N × d_h]`, row `i` is the gate vector of expert `i`.
    pub a: Parameter<T>,
}

impl<T: Real> GateHead<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, experts: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            a: Parameter::new(name, init::xavier_uniform(rng, experts, dim)),
        }
    }

    pub fn experts(&self) -> usize {
        self.a.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.a.value.cols()
    }

    /// Logits for a batch of sentence representations `[B × d_h] → [B × N]`.
    pub fn logits(&self, hx: &Tensor<T>) -> Result<Tensor<T>> {
        if hx.cols() != self.dim() {
            return Err(TensorError::ShapeMismatch {
                op: "gate_logits",
                left: hx.shape().to_vec(),
                right: self.a.shape().to_vec(),
            }
            .into());
        }
        let rows = hx.clone().reshape(&[hx.rows(), hx.cols()])?;
        Ok(rows.matmul_nt(&self.a.value)?)
    }

    /// Returns `(∂/∂a, ∂/∂hx)` for upstream `[B × N]`.
    pub fn backward(&self, hx: &Tensor<T>, upstream: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let rows = hx.clone().reshape(&[hx.rows(), hx.cols()])?;
        if upstream.rank() != 2 || upstream.rows() != rows.rows() || upstream.cols() != self.experts() {
            return Err(TensorError::ShapeMismatch {
                op: "gate_backward",
                left: upstream.shape().to_vec(),
                right: vec![rows.rows(), self.experts()],
            }
            .into());
        }
        let d_a = upstream.matmul_tn(&rows)?;
        let d_hx = upstream.matmul(&self.a.value)?.reshape(hx.shape())?;
        Ok((d_a, d_hx))
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.a]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.a]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::rng;

    #[test]
    fn symmetric_gate_gives_equal_logits() {
        let mut g = GateHead::<f64>::new("gate.a", 3, 4, &mut rng(0));
        g.a.value = Tensor::from_vec(&[3, 4], [0.5, -1.0, 2.0, 0.0].repeat(3)).unwrap();
        let l = g.logits(&Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let w = l.softmax(1).unwrap();
        for v in w.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_gives_zero_logits() {
        let g = GateHead::<f64>::new("gate.a", 2, 3, &mut rng(1));
        let l = g.logits(&Tensor::zeros(&[3])).unwrap();
        assert_eq!(l.data(), &[0.0, 0.0]);
    }

    #[test]
    fn hand_dot_products() {
        let mut g = GateHead::<f64>::new("gate.a", 2, 3, &mut rng(2));
        g.a.value = Tensor::from_vec(&[2, 3], vec![1.0, 0.0, -1.0, 0.5, 2.0, 1.0]).unwrap();
        let l = g.logits(&Tensor::vector(vec![2.0, 1.0, 3.0]).unwrap()).unwrap();
        // (2 − 3, 1 + 2 + 3)
        assert_eq!(l.data(), &[-1.0, 6.0]);
        let (d_a, d_hx) = g
            .backward(
                &Tensor::vector(vec![2.0, 1.0, 3.0]).unwrap(),
                &Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap(),
            )
            .unwrap();
        assert_eq!(d_a.data(), &[2.0, 1.0, 3.0, 0.0, 0.0, 0.0]);
        assert_eq!(d_hx.data(), &[1.0, 0.0, -1.0]);
    }

    #[test]
    fn shape_mismatch() {
        let g = GateHead::<f64>::new("gate.a", 2, 3, &mut rng(3));
        assert!(g.logits(&Tensor::zeros(&[4])).is_err());
    }
}
