use super::params::{Group, Weights};
use crate::scalar::Scalar;

/// Adam with decoupled weight decay. Encoder and head tensors take separate
/// learning rates.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(weights: &Weights<T>, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<T>> = weights
            .tensors()
            .iter()
            .map(|(_, _, t)| vec![T::zero(); t.len()])
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, weights: &mut Weights<T>, grads: &Weights<T>, lr_encoder: f64, lr_heads: f64) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one = T::one();
        let c1 = T::from_f64_lossy(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - self.beta2.powi(t));
        let eps = T::from_f64_lossy(self.eps);
        let wd = self.weight_decay;
        let (first, second) = (&mut self.first, &mut self.second);
        let mut k = 0;
        weights.zip_mut(grads, |group, theta, g| {
            let lr = match group {
                Group::Encoder => lr_encoder,
                Group::Head => lr_heads,
            };
            let decay = T::from_f64_lossy(1.0 - lr * wd);
            let lr = T::from_f64_lossy(lr);
            for (((p, &gi), m), v) in theta.iter_mut().zip(g).zip(&mut first[k]).zip(&mut second[k]) {
                *m = b1 * *m + (one - b1) * gi;
                *v = b2 * *v + (one - b2) * gi * gi;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = *p * decay - lr * (m_hat / (v_hat.sqrt() + eps));
            }
            k += 1;
        });
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut Weights<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(T::from_f64_lossy(max_norm / norm));
    }
    norm
}
