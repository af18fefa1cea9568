//! Gated embedding unit: projection, context gating, L2 normalization.
//!
//! ```text
//! Z1 = W1·Z0 + b1
//! Z2 = Z1 ∘ σ(W2·Z1 + b2)
//! Z  = Z2 / ‖Z2‖
//! ```
//!
//! Inputs are batched row-wise: `[B × d1] → [B × d2]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::init;
use crate::param::Parameter;
use crate::real::Real;
use crate::tensor::{l2_normalize_backward, l2_normalize_in_place, sigmoid, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct GatedEmbeddingUnit<T> {
    pub w1: Parameter<T>,
    pub b1: Parameter<T>,
    pub w2: Parameter<T>,
    pub b2: Parameter<T>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GeuCache<T> {
    input: Tensor<T>,
    z1: Tensor<T>,
    gate: Tensor<T>,
    output: Tensor<T>,
    norms: Vec<T>,
}

impl<T> GeuCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

#[derive(Debug, Clone)]
pub struct GeuGrads<T> {
    pub input: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Real> GatedEmbeddingUnit<T> {
    pub fn new<R: Rng + ?Sized>(prefix: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            w1: Parameter::new(format!("{prefix}.w1"), init::xavier_uniform(rng, d_out, d_in)),
            b1: Parameter::zeros(format!("{prefix}.b1"), &[d_out]),
            w2: Parameter::new(format!("{prefix}.w2"), init::xavier_uniform(rng, d_out, d_out)),
            b2: Parameter::zeros(format!("{prefix}.b2"), &[d_out]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.value.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w1.value.rows()
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<GeuCache<T>> {
        if input.rank() != 2 || input.cols() != self.input_dim() {
            return Err(TensorError::ShapeMismatch {
                op: "geu_forward",
                left: input.shape().to_vec(),
                right: self.w1.shape().to_vec(),
            }
            .into());
        }
        let mut z1 = input.matmul_nt(&self.w1.value)?;
        add_bias(&mut z1, self.b1.value.data());
        let mut gate = z1.matmul_nt(&self.w2.value)?;
        add_bias(&mut gate, self.b2.value.data());
        gate.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut output = z1.clone();
        for (o, g) in output.data_mut().iter_mut().zip(gate.data()) {
            *o *= *g;
        }
        let norms = (0..output.rows())
            .map(|i| l2_normalize_in_place(output.row_mut(i)))
            .collect();
        Ok(GeuCache {
            input: input.clone(),
            z1,
            gate,
            output,
            norms,
        })
    }

    /// Single-vector convenience over [`forward`](Self::forward).
    pub fn forward_one(&self, z0: &Tensor<T>) -> Result<Tensor<T>> {
        let row = z0.clone().reshape(&[1, z0.len()])?;
        let out = self.forward(&row)?.output;
        let d = out.cols();
        Ok(out.reshape(&[d])?)
    }

    pub fn backward(&self, cache: &GeuCache<T>, upstream: &Tensor<T>) -> Result<GeuGrads<T>> {
        if upstream.shape() != cache.output.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "geu_backward",
                left: upstream.shape().to_vec(),
                right: cache.output.shape().to_vec(),
            }
            .into());
        }
        let (rows, d) = (upstream.rows(), upstream.cols());
        let mut d_z2 = Tensor::zeros(&[rows, d]);
        for i in 0..rows {
            l2_normalize_backward(
                cache.output.row(i),
                cache.norms[i],
                upstream.row(i),
                d_z2.row_mut(i),
            );
        }
        // Z2 = Z1 ∘ G with G = σ(A): split into the direct path and the gate path.
        let mut d_z1 = d_z2.clone();
        let mut d_pre = d_z2;
        {
            let z1 = cache.z1.data();
            let g = cache.gate.data();
            for (k, (dz, da)) in d_z1
                .data_mut()
                .iter_mut()
                .zip(d_pre.data_mut().iter_mut())
                .enumerate()
            {
                let up = *dz;
                *dz = up * g[k];
                *da = up * z1[k] * g[k] * (T::one() - g[k]);
            }
        }
        let w2 = d_pre.matmul_tn(&cache.z1)?;
        let b2 = column_sums(&d_pre);
        d_z1.add_assign(&d_pre.matmul(&self.w2.value)?)?;
        let w1 = d_z1.matmul_tn(&cache.input)?;
        let b1 = column_sums(&d_z1);
        let input = d_z1.matmul(&self.w1.value)?;
        Ok(GeuGrads {
            input,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn accumulate(&mut self, grads: &GeuGrads<T>) -> Result<()> {
        self.w1.accumulate(&grads.w1)?;
        self.b1.accumulate(&grads.b1)?;
        self.w2.accumulate(&grads.w2)?;
        self.b2.accumulate(&grads.b2)?;
        Ok(())
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

pub(crate) fn add_bias<T: Real>(m: &mut Tensor<T>, bias: &[T]) {
    for i in 0..m.rows() {
        for (v, b) in m.row_mut(i).iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

pub(crate) fn column_sums<T: Real>(m: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(&[m.cols()]);
    for i in 0..m.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(m.row(i)) {
            *o += *v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::rng;
    use crate::tensor::norm;

    fn identity_unit() -> GatedEmbeddingUnit<f64> {
        let mut u = GatedEmbeddingUnit::new("t", 2, 2, &mut rng(0));
        u.w1.value = Tensor::identity(2);
        u.w2.value = Tensor::zeros(&[2, 2]);
        u
    }

    #[test]
    fn identity_weights_zero_gate_logits() {
        let u = identity_unit();
        let out = u.forward_one(&Tensor::vector(vec![3.0, 4.0]).unwrap()).unwrap();
        assert!((out.data()[0] - 0.6).abs() < 1e-15);
        assert!((out.data()[1] - 0.8).abs() < 1e-15);
        let cache = u
            .forward(&Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap())
            .unwrap();
        // gate = σ(0) = 0.5, so Z2 = (1.5, 2) with norm 2.5.
        assert_eq!(cache.gate.data(), &[0.5, 0.5]);
        assert!((cache.norms[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn zero_input_maps_to_zero() {
        let u = GatedEmbeddingUnit::<f64>::new("t", 4, 3, &mut rng(1));
        let out = u.forward_one(&Tensor::zeros(&[4])).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn random_output_is_unit_norm() {
        let mut r = rng(2);
        let u = GatedEmbeddingUnit::<f32>::new("t", 8, 5, &mut r);
        let x = init::normal(&mut r, &[3, 8], 1.0);
        let cache = u.forward(&x).unwrap();
        for i in 0..3 {
            assert!((norm(cache.output().row(i)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut r = rng(3);
        let u = GatedEmbeddingUnit::<f64>::new("t", 4, 3, &mut r);
        let x = init::normal(&mut r, &[2, 4], 1.0);
        let cache = u.forward(&x).unwrap();
        let g = u.backward(&cache, &Tensor::zeros(&[2, 3])).unwrap();
        for t in [&g.input, &g.w1, &g.b1, &g.w2, &g.b2] {
            assert_eq!(t.max_abs(), 0.0);
        }
    }

    #[test]
    fn upstream_parallel_to_output_is_annihilated() {
        let mut r = rng(4);
        let u = GatedEmbeddingUnit::<f64>::new("t", 4, 3, &mut r);
        let x = init::normal(&mut r, &[1, 4], 1.0);
        let cache = u.forward(&x).unwrap();
        let mut up = cache.output().clone();
        up.scale(2.5);
        let g = u.backward(&cache, &up).unwrap();
        assert!(g.input.max_abs() < 1e-12);
        assert!(g.w1.max_abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let u = GatedEmbeddingUnit::<f64>::new("t", 4, 3, &mut rng(0));
        assert!(u.forward(&Tensor::zeros(&[1, 5])).is_err());
        let cache = u.forward(&Tensor::zeros(&[1, 4])).unwrap();
        assert!(u.backward(&cache, &Tensor::zeros(&[1, 4])).is_err());
    }
}
