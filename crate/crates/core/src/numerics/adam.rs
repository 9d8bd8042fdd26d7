use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{mismatch, Error, Result};

/// A named collection of trainable tensors visited in a fixed order.
pub trait ParamSet<T: Real> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// ‖Θ‖² over every tensor, accumulated in f64.
    fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.data().iter())
            .map(|x| x.to_f64() * x.to_f64())
            .sum()
    }
}

impl<T: Real> ParamSet<T> for Tensor<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        alloc::vec![("theta".into(), self)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        alloc::vec![("theta".into(), self)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coefficient β of the β‖Θ‖² penalty; its gradient 2βθ is added to the
    /// raw gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment accumulators mirroring a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<P: ParamSet<T> + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// First and second moment accumulators, in parameter order.
    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.first, &self.second)
    }

    /// Applies one bias-corrected Adam update in place.
    ///
    /// The whole step is rejected (parameters and state untouched) if any
    /// gradient is non-finite or any shape disagrees.
    pub fn step<P: ParamSet<T> + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if grads.len() != params.len() || params.len() != self.first.len() {
            return Err(mismatch("parameter set", &[self.first.len()], &[params.len(), grads.len()]));
        }
        for (k, ((name, p), (_, g))) in params.iter().zip(&grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(mismatch(name, p.shape(), g.shape()));
            }
            if p.shape() != self.first[k].shape() {
                return Err(mismatch(name, self.first[k].shape(), p.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient { param: name.clone() });
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let decay = T::from_f64(2.0 * c.weight_decay);
        let lr = T::from_f64(c.learning_rate);
        let eps = T::from_f64(c.epsilon);
        let (inv_bc1, inv_bc2) = (T::from_f64(1.0 / bc1), T::from_f64(1.0 / bc2));

        for (k, ((_, p), (_, g))) in params.iter_mut().zip(&grads).enumerate() {
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for (((theta, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let gi = gi + decay * *theta;
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi * inv_bc1;
                let v_hat = *vi * inv_bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step<T: Real, P: ParamSet<T> + ?Sized>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<T>,
) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cfg(lr: f64, decay: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            weight_decay: decay,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = Tensor::vector(vec![1.0_f64, -2.0, 3.0]);
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut s = AdamState::new(&p, cfg(0.1, 0.0));
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut s).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.step_count(), 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::vector(vec![0.0_f64]);
        let g = Tensor::vector(vec![1.0]);
        let mut s = AdamState::new(&p, cfg(0.001, 0.0));
        adam_step(&mut p, &g, &mut s).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = −lr/(1 + ε)
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn two_steps_closed_form() {
        let (lr, b1, b2, eps, g) = (0.01, 0.9, 0.999, 1e-8, 0.5);
        let mut p = Tensor::vector(vec![1.0_f64]);
        let grad = Tensor::vector(vec![g]);
        let mut s = AdamState::new(&p, cfg(lr, 0.0));
        adam_step(&mut p, &grad, &mut s).unwrap();
        adam_step(&mut p, &grad, &mut s).unwrap();
        // Hand recurrence: with constant g, m_t = (1-b1^t) g and v_t = (1-b2^t) g²,
        // so each bias-corrected step is exactly lr·g/(|g| + ε).
        let m1 = (1.0 - b1) * g;
        let v1 = (1.0 - b2) * g * g;
        let x1 = 1.0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * g;
        let v2 = b2 * v1 + (1.0 - b2) * g * g;
        let x2 = x1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!((p.data()[0] - x2).abs() < 1e-14);
        assert!((x2 - (1.0 - 2.0 * lr * g / (g + eps))).abs() < 1e-12);
    }

    #[test]
    fn decay_enters_gradient() {
        // Zero raw gradient but β > 0: effective gradient 2βθ > 0 → θ decreases by lr.
        let mut p = Tensor::vector(vec![2.0_f64]);
        let g = Tensor::zeros(&[1]);
        let mut s = AdamState::new(&p, cfg(0.1, 0.5));
        adam_step(&mut p, &g, &mut s).unwrap();
        assert!((p.data()[0] - (2.0 - 0.1 / (1.0 + 1e-8 / 2.0))).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = Tensor::vector(vec![1.0_f64, 1.0]);
        let g = Tensor::vector(vec![0.0, f64::NAN]);
        let mut s = AdamState::new(&p, cfg(0.1, 0.0));
        let err = adam_step(&mut p, &g, &mut s).unwrap_err();
        assert_eq!(err, Error::NonFiniteGradient { param: "theta".into() });
        assert_eq!(p.data(), &[1.0, 1.0]);
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::vector(vec![1.0_f64, 1.0]);
        let g = Tensor::vector(vec![0.0]);
        let mut s = AdamState::new(&p, cfg(0.1, 0.0));
        assert!(matches!(
            adam_step(&mut p, &g, &mut s),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
