use serde::{Deserialize, Serialize};

use super::ParameterStore;
use crate::error::{Error, Result};

/// Adam moment estimates for one parameter store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Bias-corrected update from `params.grads`, which are then zeroed.
    pub fn apply(&mut self, params: &mut ParameterStore) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::SpecMismatch(format!(
                "optimizer holds {} moments, store has {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((theta, &g), m), v) in params
            .values
            .iter_mut()
            .zip(&params.grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *theta -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        params.zero_grads();
        Ok(())
    }
}

/// Free-function form of [`AdamState::apply`].
pub fn adam_step(params: &mut ParameterStore, adam: &mut AdamState) -> Result<()> {
    adam.apply(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, NetworkSpec};

    fn store(values: Vec<f64>, grads: Vec<f64>) -> ParameterStore {
        let spec = NetworkSpec {
            input_dim: values.len() - 1,
            fc_in: vec![],
            gru_layers: vec![],
            fc_out: vec![],
            output_dim: 1,
            activation: Activation::Identity,
        };
        let mut s = ParameterStore::from_values(&spec, values).unwrap();
        s.grads = grads;
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = store(vec![0.0, 0.0], vec![1.0, -4.0]);
        let mut adam = AdamState::new(2, 1e-3);
        adam.apply(&mut p).unwrap();
        assert!((p.values[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!((p.values[1] - 4e-3 / (4.0 + 1e-8)).abs() < 1e-15);
        assert!((adam.m[0] - 0.1).abs() < 1e-15);
        assert!((adam.v[0] - 0.001).abs() < 1e-15);
        assert_eq!(p.grads, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = store(vec![0.3, -0.2], vec![0.0, 0.0]);
        let mut adam = AdamState::new(2, 1e-3);
        for _ in 0..5 {
            adam.apply(&mut p).unwrap();
        }
        assert_eq!(p.values, vec![0.3, -0.2]);
        assert_eq!(adam.step, 5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = store(vec![3.0, -2.0], vec![0.0, 0.0]);
        let mut adam = AdamState::new(2, 0.05);
        for _ in 0..2000 {
            p.grads = p.values.iter().map(|v| 2.0 * v).collect();
            adam.apply(&mut p).unwrap();
        }
        assert!(p.values.iter().all(|v| v.abs() < 1e-3), "{:?}", p.values);
    }

    #[test]
    fn rejects_wrong_length() {
        let mut p = store(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert!(AdamState::new(3, 1e-3).apply(&mut p).is_err());
    }
}
