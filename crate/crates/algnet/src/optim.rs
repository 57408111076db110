//! Adam with bias correction, over a [`ParamStore`].

use std::collections::HashMap;

use thiserror::Error;

use crate::params::ParamStore;

/// Gradients keyed by parameter name, as extracted from a tape after backward.
pub type GradMap = HashMap<String, Vec<f64>>;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("no gradient supplied for parameter {0}")]
    MissingGradient(String),
    #[error("gradient for parameter {name} has {got} values, expected {expected}")]
    ShapeMismatch {
        name: String,
        got: usize,
        expected: usize,
    },
}

pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over every parameter in the store, in store order.
    /// Every parameter must have a gradient (unused ones carry zeros).
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradMap) -> Result<(), OptimError> {
        // validate everything before touching any parameter
        for (name, param) in store.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| OptimError::MissingGradient(name.to_string()))?;
            if g.len() != param.numel() {
                return Err(OptimError::ShapeMismatch {
                    name: name.to_string(),
                    got: g.len(),
                    expected: param.numel(),
                });
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let names: Vec<String> = store.names().map(String::from).collect();
        for name in names {
            let g = &grads[&name];
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let data = store.data_mut(&name);
            for k in 0..g.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                data[k] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_with_unit_gradient_moves_by_about_lr() {
        let mut store = ParamStore::new();
        store.insert("w", vec![1], vec![1.0]);
        let mut adam = AdamState::new(0.01);
        let mut grads = GradMap::new();
        grads.insert("w".into(), vec![1.0]);
        adam.step(&mut store, &grads).unwrap();
        // bias-corrected m_hat = v_hat = 1, so the step is lr/(1 + eps)
        let w = store.get("w").data[0];
        assert!((w - (1.0 - 0.01)).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn constant_gradient_keeps_step_size_stable() {
        // with a constant gradient, every bias-corrected step is exactly lr
        let mut store = ParamStore::new();
        store.insert("w", vec![1], vec![0.0]);
        let mut adam = AdamState::new(0.1);
        let mut grads = GradMap::new();
        grads.insert("w".into(), vec![2.0]);
        let mut prev = 0.0;
        for _ in 0..5 {
            adam.step(&mut store, &grads).unwrap();
            let w = store.get("w").data[0];
            let delta = prev - w;
            assert!((delta - 0.1).abs() < 1e-6, "step size {delta}");
            prev = w;
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w", vec![2], vec![3.0, -4.0]);
        let mut adam = AdamState::new(0.05);
        let mut grads = GradMap::new();
        grads.insert("w".into(), vec![0.0, 0.0]);
        for _ in 0..3 {
            adam.step(&mut store, &grads).unwrap();
        }
        assert_eq!(store.get("w").data.as_slice(), &[3.0, -4.0]);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = ParamStore::new();
        store.insert("w", vec![1], vec![0.0]);
        store.insert("u", vec![1], vec![0.0]);
        let mut adam = AdamState::new(0.1);
        let mut grads = GradMap::new();
        grads.insert("w".into(), vec![1.0]);
        let err = adam.step(&mut store, &grads).unwrap_err();
        assert!(matches!(err, OptimError::MissingGradient(n) if n == "u"));
    }

    #[test]
    fn descends_a_quadratic() {
        // minimize (w - 3)^2; gradient 2(w - 3)
        let mut store = ParamStore::new();
        store.insert("w", vec![1], vec![-2.0]);
        let mut adam = AdamState::new(0.05);
        for _ in 0..2000 {
            let w = store.get("w").data[0];
            let mut grads = GradMap::new();
            grads.insert("w".into(), vec![2.0 * (w - 3.0)]);
            adam.step(&mut store, &grads).unwrap();
        }
        let w = store.get("w").data[0];
        assert!((w - 3.0).abs() < 1e-2, "converged to {w}");
    }
}
