//! Adaptive moment estimation over a [`ParamStore`].

use std::collections::BTreeMap;

use super::params::ParamStore;
use crate::error::{EmberError, Result};

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// One bias-corrected update over every parameter in the store.
    ///
    /// Coordinates whose gradient is exactly zero are left untouched, so
    /// parameters never drift without a gradient signal. A non-finite
    /// gradient aborts with the offending parameter path.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let paths: Vec<String> = store.paths().cloned().collect();
        for path in paths {
            let grad = store.grad(&path)?.data().to_vec();
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(EmberError::NonFiniteGradient { path });
            }
            let m = self
                .first
                .entry(path.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let v = self
                .second
                .entry(path.clone())
                .or_insert_with(|| vec![0.0; grad.len()]);
            if m.len() != grad.len() {
                return Err(EmberError::dims(
                    format!("adam moments for {path}"),
                    m.len().to_string(),
                    grad.len().to_string(),
                ));
            }
            let param = store.get_mut(&path)?;
            for (i, &g) in grad.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param.data_mut()[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    fn scalar_store(v: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.register("x", Tensor::scalar(v)).unwrap();
        store
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // Bias correction makes m_hat / sqrt(v_hat) = 1 on the first step.
        let mut store = scalar_store(0.0);
        store.accumulate_grad("x", &[1.0]).unwrap();
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut store).unwrap();
        let moved = -store.get("x").unwrap().data()[0];
        assert!((moved - 1e-3).abs() < 1e-10, "step {moved}");
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op_but_advances_time() {
        let mut store = scalar_store(0.42);
        let mut adam = AdamState::new(1e-3);
        // Bake in momentum first, then apply a zero gradient.
        store.accumulate_grad("x", &[1.0]).unwrap();
        adam.step(&mut store).unwrap();
        let after_first = store.get("x").unwrap().data()[0];
        store.zero_grads();
        adam.step(&mut store).unwrap();
        assert_eq!(store.get("x").unwrap().data()[0], after_first);
        assert_eq!(adam.t, 2);
    }

    #[test]
    fn opposite_gradients_bound_the_drift() {
        let mut store = scalar_store(0.0);
        let mut adam = AdamState::new(1e-3);
        store.accumulate_grad("x", &[1.0]).unwrap();
        adam.step(&mut store).unwrap();
        store.zero_grads();
        store.accumulate_grad("x", &[-1.0]).unwrap();
        adam.step(&mut store).unwrap();
        let drift = store.get("x").unwrap().data()[0].abs();
        assert!(drift < 2.0 * 1e-3, "drift {drift}");
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut store = scalar_store(0.0);
        store.accumulate_grad("x", &[f64::NAN]).unwrap();
        let mut adam = AdamState::new(1e-3);
        match adam.step(&mut store) {
            Err(EmberError::NonFiniteGradient { path }) => assert_eq!(path, "x"),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }
}
