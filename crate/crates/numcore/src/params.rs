//! Named trainable tensors and the Adam optimizer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{NumError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub value: Tensor,
    pub trainable: bool,
    #[serde(skip)]
    grad: Option<Tensor>,
    /// First moment estimate.
    m: Tensor,
    /// Second moment estimate.
    v: Tensor,
}

impl Parameter {
    fn new(value: Tensor, trainable: bool) -> Self {
        let (r, c) = (value.rows(), value.cols());
        Self {
            value,
            trainable,
            grad: None,
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
        }
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    params: BTreeMap<String, Parameter>,
    step: u64,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        self.insert_with(name.into(), value, true)
    }

    pub fn insert_frozen(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        self.insert_with(name.into(), value, false)
    }

    fn insert_with(&mut self, name: String, value: Tensor, trainable: bool) -> Result<()> {
        if self.params.contains_key(&name) {
            return Err(NumError::DuplicateParameter(name));
        }
        self.params.insert(name, Parameter::new(value, trainable));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| NumError::UnknownParameter(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| NumError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Sets the trainable flag on every parameter whose name starts with
    /// `prefix`. Returns how many parameters matched.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) -> usize {
        let mut n = 0;
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
                if !trainable {
                    p.grad = None;
                }
                n += 1;
            }
        }
        n
    }

    pub fn trainable_count(&self) -> usize {
        self.params.values().filter(|p| p.trainable).count()
    }

    /// Total number of scalar entries across all parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.shape().numel()).sum()
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|p| p.grad.as_ref())
    }

    pub fn accumulate_grad(&mut self, name: &str, g: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| NumError::UnknownParameter(name.to_string()))?;
        if g.shape() != p.value.shape() {
            return Err(NumError::ShapeMismatch {
                op: "accumulate_grad",
                left: p.value.shape(),
                right: g.shape(),
            });
        }
        match &mut p.grad {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// One bias-corrected Adam update on every trainable parameter.
    /// Gradients are cleared and the step counter advances.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some((name, _)) = self
            .params
            .iter()
            .find(|(_, p)| p.trainable && p.grad.is_none())
        {
            return Err(NumError::MissingGradient(name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in self.params.values_mut().filter(|p| p.trainable) {
            let g = p.grad.take().expect("checked above");
            let values = p.value.data_mut();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            for (i, gi) in g.data().iter().enumerate() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Sets a zero gradient on every trainable parameter that received none,
    /// so parameters unused by a batch still take an Adam step.
    pub fn fill_missing_grads(&mut self) {
        for p in self.params.values_mut().filter(|p| p.trainable && p.grad.is_none()) {
            p.grad = Some(Tensor::zeros(p.value.rows(), p.value.cols()));
        }
    }

    /// Clears moment estimates, gradients and the step counter.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for p in self.params.values_mut() {
            p.grad = None;
            p.m = Tensor::zeros(p.value.rows(), p.value.cols());
            p.v = Tensor::zeros(p.value.rows(), p.value.cols());
        }
    }

    /// Copies values (not optimizer state) for every name present in both sets.
    pub fn copy_values_from(&mut self, other: &ParameterSet) {
        for (name, p) in self.params.iter_mut() {
            if let Some(src) = other.params.get(name) {
                if src.value.shape() == p.value.shape() {
                    p.value = src.value.clone();
                }
            }
        }
    }

    /// Removes every parameter whose name starts with `prefix`.
    pub fn remove_prefix(&mut self, prefix: &str) -> usize {
        let before = self.params.len();
        self.params.retain(|k, _| !k.starts_with(prefix));
        before - self.params.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("enc.w", Tensor::ones(2, 3)).unwrap();
        p.insert("enc.b", Tensor::zeros(1, 3)).unwrap();
        p.insert("head.w", Tensor::ones(3, 1)).unwrap();
        p
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut p = set();
        assert!(matches!(p.insert("enc.w", Tensor::zeros(1, 1)), Err(NumError::DuplicateParameter(_))));
        assert!(matches!(p.value("missing"), Err(NumError::UnknownParameter(_))));
        assert_eq!(p.numel(), 12);
    }

    #[test]
    fn prefixes_select_groups() {
        let mut p = set();
        assert_eq!(p.set_trainable("enc.", false), 2);
        assert_eq!(p.trainable_count(), 1);
        assert_eq!(p.remove_prefix("head"), 1);
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ParameterSet::new();
        p.insert("x", Tensor::row(&[1.0, -1.0])).unwrap();
        p.accumulate_grad("x", Tensor::row(&[0.5, -2.0])).unwrap();
        let cfg = AdamConfig::with_lr(0.1);
        p.adam_step(&cfg).unwrap();
        // bias-corrected first step is lr * sign(g) up to epsilon
        let x = p.value("x").unwrap();
        assert!((x.get(0, 0) - 0.9).abs() < 1e-6);
        assert!((x.get(0, 1) + 0.9).abs() < 1e-6);
        assert_eq!(p.step_count(), 1);
    }
}
