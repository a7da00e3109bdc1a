use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// One bias-corrected Adam update using the gradients currently stored.
    /// Leaves every parameter untouched if any gradient is non-finite.
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        if let Some(bad) = store.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {} contains NaN/Inf; Adam step skipped",
                bad.name
            )));
        }
        store.adam_step += 1;
        let t = store.adam_step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for p in store.iter_mut() {
            let g = p.grad.data();
            let m = p.adam_m.data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = p.adam_v.data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let m = p.adam_m.data();
            let v = p.adam_v.data();
            for ((w, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Matrix::filled(1, 1, v));
        s
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut s = scalar_store(0.7);
        Adam::with_lr(0.1).step(&mut s).unwrap();
        assert_eq!(s.iter().next().unwrap().value[(0, 0)], 0.7);
        assert_eq!(s.adam_step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(0.0);
        s.iter_mut().next().unwrap().grad.fill(1.0);
        Adam::with_lr(0.1).step(&mut s).unwrap();
        // m̂ = 1, v̂ = 1  →  Δ = lr / (1 + eps)
        let p = s.iter().next().unwrap().value[(0, 0)];
        assert!((p + 0.1).abs() < 1e-8, "{p}");
    }

    #[test]
    fn repeated_grad_does_not_grow_step() {
        let mut s = scalar_store(0.0);
        let adam = Adam::with_lr(0.1);
        s.iter_mut().next().unwrap().grad.fill(1.0);
        adam.step(&mut s).unwrap();
        let after1 = s.iter().next().unwrap().value[(0, 0)];
        adam.step(&mut s).unwrap();
        let after2 = s.iter().next().unwrap().value[(0, 0)];
        assert!((after2 - after1).abs() <= after1.abs() + 1e-15);
    }

    #[test]
    fn non_finite_grad_aborts() {
        let mut s = scalar_store(1.0);
        s.iter_mut().next().unwrap().grad.fill(f64::NAN);
        assert!(Adam::default().step(&mut s).is_err());
        assert_eq!(s.iter().next().unwrap().value[(0, 0)], 1.0);
        assert_eq!(s.adam_step_count(), 0);
    }
}
