use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize, lr: T) -> Self {
        Adam { lr, beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8), m: vec![T::zero(); len], v: vec![T::zero(); len], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One step along `-grad`. Non-finite gradients skip the step entirely
    /// and return `false`, leaving parameters and moments untouched.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) -> bool {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        if grad.iter().any(|g| !g.is_finite()) {
            return false;
        }
        self.t += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        true
    }
}

/// Plain gradient step `θ ← θ - lr·g`.
pub fn sgd_step<T: Real>(params: &mut [T], grad: &[T], lr: T) {
    for (p, &g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
}
