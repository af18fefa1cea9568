//! NetVLAD aggregation of a descriptor sequence `[T × d]` into a `K·d` vector.
//!
//! Each descriptor is softly assigned to the `K` clusters through a softmax
//! over affine scores, residuals to the learnable centers are accumulated per
//! cluster, each cluster block is L2-normalized and the flattened result is
//! L2-normalized again.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::init;
use crate::param::Parameter;
use crate::real::Real;
use crate::tensor::{
    dot, l2_normalize_backward, l2_normalize_in_place, softmax_backward, softmax_in_place, Tensor,
    TensorError,
};

#[derive(Debug, Clone, PartialEq)]
pub struct NetVladAggregator<T> {
    /// `[K × d]`
    pub centers: Parameter<T>,
    /// `[K × d]`
    pub assign_w: Parameter<T>,
    /// `[K]`
    pub assign_b: Parameter<T>,
}

#[derive(Debug, Clone)]
pub struct NetVladCache<T> {
    /// Soft assignments `[T × K]`.
    assign: Tensor<T>,
    /// Intra-normalized blocks `[K × d]`.
    blocks: Tensor<T>,
    block_norms: Vec<T>,
    /// Final output `[K·d]`.
    output: Tensor<T>,
    global_norm: T,
}

impl<T> NetVladCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }

    pub fn assignments(&self) -> &Tensor<T> {
        &self.assign
    }
}

#[derive(Debug, Clone)]
pub struct NetVladGrads<T> {
    pub input: Tensor<T>,
    pub centers: Tensor<T>,
    pub assign_w: Tensor<T>,
    pub assign_b: Tensor<T>,
}

impl<T: Real> NetVladAggregator<T> {
    pub fn new<R: Rng + ?Sized>(prefix: &str, clusters: usize, dim: usize, rng: &mut R) -> Self {
        let std = 1.0 / Float::sqrt(dim as f64);
        Self {
            centers: Parameter::new(
                format!("{prefix}.centers"),
                init::normal(rng, &[clusters, dim], std),
            ),
            assign_w: Parameter::new(
                format!("{prefix}.assign_w"),
                init::normal(rng, &[clusters, dim], std),
            ),
            assign_b: Parameter::zeros(format!("{prefix}.assign_b"), &[clusters]),
        }
    }

    pub fn clusters(&self) -> usize {
        self.centers.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.value.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.clusters() * self.dim()
    }

    pub fn forward(&self, seq: &Tensor<T>) -> Result<NetVladCache<T>> {
        if seq.rank() != 2 || seq.cols() != self.dim() {
            return Err(TensorError::ShapeMismatch {
                op: "netvlad_forward",
                left: seq.shape().to_vec(),
                right: self.centers.shape().to_vec(),
            }
            .into());
        }
        let t_len = seq.rows();
        if t_len == 0 {
            return Err(Error::EmptySequence("netvlad input"));
        }
        let (k, d) = (self.clusters(), self.dim());
        let mut assign = seq.matmul_nt(&self.assign_w.value)?;
        for t in 0..t_len {
            let row = assign.row_mut(t);
            for (a, b) in row.iter_mut().zip(self.assign_b.value.data()) {
                *a += *b;
            }
            softmax_in_place(row);
        }
        // V_k = Σ_t a_tk x_t − (Σ_t a_tk) c_k
        let mut blocks = assign.matmul_tn(seq)?;
        for c in 0..k {
            let mass: T = (0..t_len).map(|t| assign.get2(t, c)).sum();
            let center = self.centers.value.row(c);
            for (v, cv) in blocks.row_mut(c).iter_mut().zip(center) {
                *v -= mass * *cv;
            }
        }
        let block_norms = (0..k)
            .map(|c| l2_normalize_in_place(blocks.row_mut(c)))
            .collect();
        let mut out = blocks.data().to_vec();
        let global_norm = l2_normalize_in_place(&mut out);
        Ok(NetVladCache {
            assign,
            blocks,
            block_norms,
            output: Tensor::from_vec(&[k * d], out)?,
            global_norm,
        })
    }

    pub fn backward(
        &self,
        seq: &Tensor<T>,
        cache: &NetVladCache<T>,
        upstream: &Tensor<T>,
    ) -> Result<NetVladGrads<T>> {
        let (k, d) = (self.clusters(), self.dim());
        if upstream.len() != k * d || seq.cols() != d || seq.rows() != cache.assign.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "netvlad_backward",
                left: upstream.shape().to_vec(),
                right: cache.output.shape().to_vec(),
            }
            .into());
        }
        let t_len = seq.rows();
        let mut d_blocks = vec![T::zero(); k * d];
        l2_normalize_backward(
            cache.output.data(),
            cache.global_norm,
            upstream.data(),
            &mut d_blocks,
        );
        let mut d_v = Tensor::zeros(&[k, d]);
        for c in 0..k {
            l2_normalize_backward(
                cache.blocks.row(c),
                cache.block_norms[c],
                &d_blocks[c * d..(c + 1) * d],
                d_v.row_mut(c),
            );
        }
        let mut d_centers = Tensor::zeros(&[k, d]);
        for c in 0..k {
            let mass: T = (0..t_len).map(|t| cache.assign.get2(t, c)).sum();
            for (g, v) in d_centers.row_mut(c).iter_mut().zip(d_v.row(c)) {
                *g = -mass * *v;
            }
        }
        // Direct path x_t → V_k, weighted by the assignments.
        let mut d_input = cache.assign.matmul(&d_v)?;
        // Assignment path: ∂/∂a_tk = ⟨dV_k, x_t − c_k⟩, then through the softmax.
        let mut d_scores = Tensor::zeros(&[t_len, k]);
        let mut d_assign = vec![T::zero(); k];
        for t in 0..t_len {
            let x = seq.row(t);
            for (c, da) in d_assign.iter_mut().enumerate() {
                *da = dot(d_v.row(c), x) - dot(d_v.row(c), self.centers.value.row(c));
            }
            softmax_backward(cache.assign.row(t), &d_assign, d_scores.row_mut(t));
        }
        let d_w = d_scores.matmul_tn(seq)?;
        let d_b = super::geu::column_sums(&d_scores);
        d_input.add_assign(&d_scores.matmul(&self.assign_w.value)?)?;
        Ok(NetVladGrads {
            input: d_input,
            centers: d_centers,
            assign_w: d_w,
            assign_b: d_b,
        })
    }

    pub fn accumulate(&mut self, grads: &NetVladGrads<T>) -> Result<()> {
        self.centers.accumulate(&grads.centers)?;
        self.assign_w.accumulate(&grads.assign_w)?;
        self.assign_b.accumulate(&grads.assign_b)?;
        Ok(())
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.centers, &self.assign_w, &self.assign_b]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.centers, &mut self.assign_w, &mut self.assign_b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::rng;
    use crate::tensor::norm;

    #[test]
    fn single_cluster_is_normalized_residual_sum() {
        let mut r = rng(5);
        let agg = NetVladAggregator::<f64>::new("v", 1, 3, &mut r);
        let seq = init::normal(&mut r, &[4, 3], 1.0);
        let out = agg.forward(&seq).unwrap();
        let c = agg.centers.value.row(0);
        let mut expect = vec![0.0; 3];
        for t in 0..4 {
            for j in 0..3 {
                expect[j] += seq.get2(t, j) - c[j];
            }
        }
        l2_normalize_in_place(&mut expect);
        for (a, b) in out.output().data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(out.assignments().data().iter().all(|a| *a == 1.0));
    }

    #[test]
    fn descriptor_at_its_center_leaves_near_zero_residual() {
        let mut r = rng(6);
        let mut agg = NetVladAggregator::<f64>::new("v", 3, 2, &mut r);
        agg.centers.value = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, -1.0]).unwrap();
        // Peak the assignment of cluster 0 with a large bias.
        agg.assign_w.value = Tensor::zeros(&[3, 2]);
        agg.assign_b.value = Tensor::vector(vec![40.0, 0.0, 0.0]).unwrap();
        let seq = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let cache = agg.forward(&seq).unwrap();
        // Unnormalized block 0 is a_0·(x − c_0) = 0; blocks 1 and 2 carry weight e^-40.
        assert!(cache.block_norms[0] < 1e-12);
        assert!(cache.block_norms[1] < 1e-15 && cache.block_norms[1] > 0.0);
        let out = cache.output().data();
        assert!(out[0].abs() < 1e-12 && out[1].abs() < 1e-12);
    }

    #[test]
    fn permutation_invariant() {
        let mut r = rng(7);
        let agg = NetVladAggregator::<f64>::new("v", 4, 3, &mut r);
        let seq = init::normal(&mut r, &[5, 3], 1.0);
        let mut rows: Vec<&[f64]> = (0..5).map(|t| seq.row(t)).collect();
        rows.reverse();
        rows.swap(0, 2);
        let perm = Tensor::from_rows(&rows).unwrap();
        let a = agg.forward(&seq).unwrap();
        let b = agg.forward(&perm).unwrap();
        for (x, y) in a.output().data().iter().zip(b.output().data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((norm(a.output().data()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sequence_rejected() {
        let agg = NetVladAggregator::<f32>::new("v", 2, 3, &mut rng(0));
        assert!(matches!(
            agg.forward(&Tensor::zeros(&[0, 3])),
            Err(Error::EmptySequence(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut r = rng(8);
        let agg = NetVladAggregator::<f64>::new("v", 3, 2, &mut r);
        let seq = init::normal(&mut r, &[4, 2], 1.0);
        let cache = agg.forward(&seq).unwrap();
        let g = agg.backward(&seq, &cache, &Tensor::zeros(&[6])).unwrap();
        for t in [&g.input, &g.centers, &g.assign_w, &g.assign_b] {
            assert_eq!(t.max_abs(), 0.0);
        }
    }
}
