//! First-order optimizers over flat parameter slices (minimization).

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Adagrad: `accum += g^2; x -= lr * g / (sqrt(accum) + eps)`, accumulator starting at zero.
#[derive(Clone, Debug)]
pub struct Adagrad<T> {
    lr: T,
    eps: T,
    accum: Vec<T>,
}

impl<T: Scalar> Adagrad<T> {
    pub fn new(lr: f64, eps: f64, len: usize) -> Self {
        Adagrad {
            lr: T::of(lr),
            eps: T::of(eps),
            accum: vec![T::zero(); len],
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), self.accum.len());
        assert_eq!(grads.len(), self.accum.len());
        for ((x, &g), acc) in params.iter_mut().zip(grads).zip(self.accum.iter_mut()) {
            if g == T::zero() {
                continue;
            }
            *acc += g * g;
            *x -= self.lr * g / (acc.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, len: usize) -> Self {
        Adam {
            lr: T::of(cfg.lr),
            beta1: T::of(cfg.beta1),
            beta2: T::of(cfg.beta2),
            eps: T::of(cfg.eps),
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adagrad_first_step_is_lr_sized() {
        let mut opt = Adagrad::<f64>::new(0.1, 1e-10, 2);
        let mut x = [1.0, -2.0];
        opt.step(&mut x, &[4.0, -0.5]);
        assert!((x[0] - 0.9).abs() < 1e-9);
        assert!((x[1] + 1.9).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut opt = Adam::<f64>::new(AdamConfig::default(), 2);
        let mut x = [3.0, -4.0];
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 1.0), 2.0 * (x[1] + 0.5)];
            opt.step(&mut x, &g);
        }
        assert!((x[0] - 1.0).abs() < 1e-3, "{x:?}");
        assert!((x[1] + 0.5).abs() < 1e-3, "{x:?}");
    }
}
