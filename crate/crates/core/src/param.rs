//! Learnable parameters, registries over them, and the Adam optimizer.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// A named tensor together with its gradient and Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
    pub step_count: u64,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.into(),
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            value,
            step_count: 0,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    /// Adds `g` into the gradient buffer.
    pub fn accumulate(&mut self, g: &Tensor<T>) -> Result<()> {
        self.grad.add_assign(g)?;
        Ok(())
    }

    /// Copy into another precision. Gradients and optimizer state are reset.
    pub fn cast<U: Real>(&self) -> Parameter<U> {
        Parameter::new(self.name.clone(), self.value.cast())
    }
}

/// Anything that owns a fixed, ordered list of parameters.
pub trait ParameterRegistry<T: Real> {
    fn parameters(&self) -> Vec<&Parameter<T>>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>>;

    fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.grad.fill_zero();
        }
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value.len()).sum()
    }

    fn find(&self, name: &str) -> Option<&Parameter<T>> {
        self.parameters().into_iter().find(|p| p.name == name)
    }

    /// Fails on the first duplicated name.
    fn check_unique_names(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for p in self.parameters() {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::DuplicateParameter(p.name.clone()));
            }
        }
        Ok(())
    }
}

/// A plain list of parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet<T> {
    pub params: Vec<Parameter<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new(params: Vec<Parameter<T>>) -> Result<Self> {
        let set = Self { params };
        set.check_unique_names()?;
        Ok(set)
    }
}

impl<T: Real> ParameterRegistry<T> for ParamSet<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        self.params.iter().collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.params.iter_mut().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("adam hyper-parameters out of range"))
        }
    }
}

/// One bias-corrected Adam update on every parameter, then zeroes gradients.
pub fn adam_step<T: Real, R: ParameterRegistry<T> + ?Sized>(registry: &mut R, cfg: &AdamConfig) {
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    for p in registry.parameters_mut() {
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = T::lit(1.0 - Float::powi(cfg.beta1, t));
        let bc2 = T::lit(1.0 - Float::powi(cfg.beta2, t));
        let lr = T::lit(cfg.learning_rate);
        let eps = T::lit(cfg.epsilon);
        let value = p.value.data_mut();
        let grad = p.grad.data_mut();
        let m = p.adam_m.data_mut();
        let v = p.adam_v.data_mut();
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            grad[i] = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar(v: f64) -> ParamSet<f64> {
        ParamSet::new(vec![Parameter::new(
            "w",
            Tensor::vector(vec![v]).unwrap(),
        )])
        .unwrap()
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut set = scalar(1.5);
        adam_step(&mut set, &AdamConfig::default());
        adam_step(&mut set, &AdamConfig::default());
        assert_eq!(set.params[0].value.data(), &[1.5]);
        assert_eq!(set.params[0].step_count, 2);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02] {
            let mut set = scalar(0.0);
            set.params[0].grad.data_mut()[0] = g;
            let cfg = AdamConfig::with_learning_rate(0.01);
            adam_step(&mut set, &cfg);
            // m̂ = g and v̂ = g² on the first step, so the move is lr·g/(|g|+ε).
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((set.params[0].value.data()[0] - expected).abs() < 1e-12);
            assert_eq!(set.params[0].grad.data()[0], 0.0);
        }
    }

    #[test]
    fn two_steps_match_scalar_oracle() {
        let cfg = AdamConfig::with_learning_rate(0.05);
        let g = 0.7;
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.05 * mh / (vh.sqrt() + 1e-8);
        }
        let mut set = scalar(1.0);
        for _ in 0..2 {
            set.params[0].grad.data_mut()[0] = g;
            adam_step(&mut set, &cfg);
        }
        assert!((set.params[0].value.data()[0] - x).abs() < 1e-10);
    }

    #[test]
    fn duplicate_names_rejected() {
        let p = Parameter::<f32>::zeros("a", &[1]);
        assert!(matches!(
            ParamSet::new(vec![p.clone(), p]),
            Err(Error::DuplicateParameter(_))
        ));
    }

    #[test]
    fn invalid_adam_config() {
        let mut cfg = AdamConfig::default();
        cfg.beta1 = 1.0;
        assert!(cfg.validate().is_err());
        assert!(AdamConfig::with_learning_rate(0.0).validate().is_err());
    }
}
