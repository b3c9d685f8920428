//! SGD with momentum and weight decay.

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Scalar, Tensor};

/// Hyperparameters plus one velocity buffer per parameter.
///
/// Velocities are kept by index, so callers must pass the same parameter
/// list (same order, same shapes) to every [`Sgd::step`] call.
#[derive(Debug, Clone)]
pub struct Sgd<T: Scalar = f32> {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if learning_rate < 0.0 {
            return Err(Error::config(format!("learning rate must be non-negative, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if weight_decay < 0.0 {
            return Err(Error::config(format!("weight decay must be non-negative, got {weight_decay}")));
        }
        Ok(Sgd { learning_rate, momentum, weight_decay, velocity: Vec::new() })
    }

    /// `v <- momentum*v + grad + weight_decay*value; value <- value - lr*v`
    /// for every parameter with `requires_grad`.
    pub fn step(&mut self, params: &mut [&mut Parameter<T>]) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        }
        assert_eq!(self.velocity.len(), params.len(), "optimizer bound to a different parameter set");

        let mu = T::from_f64(self.momentum);
        let wd = T::from_f64(self.weight_decay);
        let lr = T::from_f64(self.learning_rate);
        for (param, vel) in params.iter_mut().zip(self.velocity.iter_mut()) {
            if !param.requires_grad {
                continue;
            }
            assert_eq!(vel.shape(), param.value.shape(), "velocity shape drifted from parameter");
            let value = param.value.data_mut();
            let grad = param.grad.data();
            for ((v, &g), x) in vel.data_mut().iter_mut().zip(grad).zip(value.iter_mut()) {
                *v = mu * *v + g + wd * *x;
                *x = *x - lr * *v;
            }
        }
    }

    pub fn velocities(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    /// Restore velocity buffers (checkpoint resume).
    pub fn set_velocities(&mut self, velocity: Vec<Tensor<T>>) {
        self.velocity = velocity;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64) -> Parameter<f64> {
        Parameter::new(Tensor::filled(&[1], v))
    }

    #[test]
    fn plain_sgd_moves_against_gradient() {
        let mut p = param(1.0);
        p.grad.fill(0.5);
        let mut opt = Sgd::new(0.1, 0.0, 0.0).unwrap();
        opt.step(&mut [&mut p]);
        assert!((p.value.data()[0] - (1.0 - 0.1 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut p = param(2.5);
        let mut opt = Sgd::new(0.1, 0.9, 0.0).unwrap();
        opt.step(&mut [&mut p]);
        assert_eq!(p.value.data()[0], 2.5);
    }

    #[test]
    fn zero_lr_is_identity_on_values() {
        let mut p = param(1.25);
        p.grad.fill(3.0);
        let mut opt = Sgd::new(0.0, 0.9, 5e-4).unwrap();
        opt.step(&mut [&mut p]);
        opt.step(&mut [&mut p]);
        assert_eq!(p.value.data()[0], 1.25);
    }

    #[test]
    fn two_momentum_steps_unroll() {
        // v1 = g, v2 = 0.9 g + g = 1.9 g; total update lr*g*(1 + 1.9).
        let lr = 0.05;
        let g = 0.8;
        let mut p = param(0.0);
        let mut opt = Sgd::new(lr, 0.9, 0.0).unwrap();
        for _ in 0..2 {
            p.grad.fill(g);
            opt.step(&mut [&mut p]);
        }
        let expect = -lr * g * (1.0 + 1.9);
        assert!((p.value.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut p = param(1.0);
        p.requires_grad = false;
        p.grad.fill(10.0);
        let mut opt = Sgd::new(0.1, 0.0, 0.0).unwrap();
        opt.step(&mut [&mut p]);
        assert_eq!(p.value.data()[0], 1.0);
    }

    #[test]
    fn invalid_hyperparameters_are_config_errors() {
        assert!(Sgd::<f32>::new(-0.1, 0.0, 0.0).is_err());
        assert!(Sgd::<f32>::new(0.1, 1.0, 0.0).is_err());
        assert!(Sgd::<f32>::new(0.1, 0.0, -1.0).is_err());
    }
}
