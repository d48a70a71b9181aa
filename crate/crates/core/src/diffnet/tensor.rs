//! Value containers and the named parameter store with Adam state.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Dense 64-bit tensor with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![0.0; numel], grad: None }
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(Error::ShapeMismatch {
                context: "Tensor::from_values".into(),
                expected: shape.to_vec(),
                actual: vec![values.len()],
            });
        }
        Ok(Tensor { shape: shape.to_vec(), values, grad: None })
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Gradient buffer, created zero-filled on first access.
    pub fn grad_mut(&mut self) -> &mut Vec<f64> {
        self.grad.get_or_insert_with(|| vec![0.0; self.values.len()])
    }
}

/// Adam moments and step count for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    fn new(numel: usize) -> Self {
        AdamState { first_moment: vec![0.0; numel], second_moment: vec![0.0; numel], step: 0 }
    }
}

/// Named trainable parameters plus per-parameter optimizer state.
///
/// Keys are ordered (BTreeMap), so iteration, checkpointing, and updates are
/// independent of insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    adam: BTreeMap<String, AdamState>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        self.adam.insert(name.clone(), AdamState::new(tensor.numel()));
        self.params.insert(name, tensor);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).ok_or_else(|| Error::UnknownParameter { name: name.into() })
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params.get_mut(name).ok_or_else(|| Error::UnknownParameter { name: name.into() })
    }

    pub fn values(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.tensor(name)?.values)
    }

    /// Add `delta` into the named parameter's gradient buffer.
    pub fn accumulate_grad(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        let tensor = self.tensor_mut(name)?;
        if delta.len() != tensor.numel() {
            return Err(Error::ShapeMismatch {
                context: format!("gradient for '{name}'"),
                expected: tensor.shape.clone(),
                actual: vec![delta.len()],
            });
        }
        let grad = tensor.grad_mut();
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Allocate (or re-zero) gradient buffers for every parameter.
    pub fn zero_grads(&mut self) {
        for tensor in self.params.values_mut() {
            tensor.grad_mut().fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_parameters(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn adam_state(&self, name: &str) -> Result<&AdamState> {
        self.adam.get(name).ok_or_else(|| Error::UnknownParameter { name: name.into() })
    }

    pub fn adam_state_mut(&mut self, name: &str) -> Result<&mut AdamState> {
        self.adam.get_mut(name).ok_or_else(|| Error::UnknownParameter { name: name.into() })
    }

    /// Ordered iteration over `(name, tensor)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Standard Adam update with bias correction; gradient buffers are zeroed
    /// afterwards. Errors if any parameter has no gradient buffer.
    pub fn adam_step(&mut self, lr: f64, betas: (f64, f64), eps: f64) -> Result<()> {
        let (beta1, beta2) = betas;
        for (name, tensor) in self.params.iter_mut() {
            let grad = tensor
                .grad
                .as_mut()
                .ok_or_else(|| Error::MissingGradient { name: name.clone() })?;
            let state = self.adam.get_mut(name).expect("adam state exists for every param");
            state.step += 1;
            let bias1 = 1.0 - beta1.powi(state.step as i32);
            let bias2 = 1.0 - beta2.powi(state.step as i32);
            for i in 0..tensor.values.len() {
                let g = grad[i];
                let m = beta1 * state.first_moment[i] + (1.0 - beta1) * g;
                let v = beta2 * state.second_moment[i] + (1.0 - beta2) * g * g;
                state.first_moment[i] = m;
                state.second_moment[i] = v;
                let m_hat = m / bias1;
                let v_hat = v / bias2;
                tensor.values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            grad.fill(0.0);
        }
        Ok(())
    }
}

/// Uniform init in `(-sqrt(1/fan_in), +sqrt(1/fan_in))` for both weights and
/// biases.
pub fn init_linear<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> (Tensor, Tensor) {
    let bound = (1.0 / fan_in as f64).sqrt();
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
    };
    let w = Tensor::from_values(&[fan_in, fan_out], draw(fan_in * fan_out)).unwrap();
    let b = Tensor::from_values(&[fan_out], draw(fan_out)).unwrap();
    (w, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_values(&[2], vec![1.5, -0.25]).unwrap());
        store.zero_grads();
        store.adam_step(1e-3, (0.9, 0.999), 1e-8).unwrap();
        assert_eq!(store.values("w").unwrap(), &[1.5, -0.25]);
    }

    #[test]
    fn first_adam_step_moves_by_about_lr() {
        // g = 1: m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_values(&[1], vec![0.7]).unwrap());
        store.accumulate_grad("w", &[1.0]).unwrap();
        store.adam_step(1e-3, (0.9, 0.999), 1e-8).unwrap();
        let moved = 0.7 - store.values("w").unwrap()[0];
        assert!((moved - 1e-3).abs() < 1e-9, "step was {moved}");
    }

    #[test]
    fn identical_parameters_get_identical_updates() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::from_values(&[1], vec![0.3]).unwrap());
        store.insert("b", Tensor::from_values(&[1], vec![0.3]).unwrap());
        store.accumulate_grad("a", &[0.5]).unwrap();
        store.accumulate_grad("b", &[0.5]).unwrap();
        store.adam_step(1e-2, (0.9, 0.999), 1e-8).unwrap();
        assert_eq!(store.values("a").unwrap(), store.values("b").unwrap());
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(&[3]));
        match store.adam_step(1e-3, (0.9, 0.999), 1e-8) {
            Err(Error::MissingGradient { name }) => assert_eq!(name, "w"),
            other => panic!("expected missing-gradient error, got {other:?}"),
        }
    }

    #[test]
    fn grads_are_zeroed_after_step() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_values(&[1], vec![1.0]).unwrap());
        store.accumulate_grad("w", &[2.0]).unwrap();
        store.adam_step(1e-3, (0.9, 0.999), 1e-8).unwrap();
        assert_eq!(store.tensor("w").unwrap().grad.as_ref().unwrap(), &vec![0.0]);
    }
}
