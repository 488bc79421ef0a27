//! Named parameters with adaptive-moment optimizer state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    m: Tensor<T>,
    v: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Param<T>>,
    pub adam: AdamConfig,
    step: u64,
}

/// Graph handles for the parameters bound into one graph.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids.get(name).copied().ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }
}

impl FromIterator<(String, NodeId)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, NodeId)>>(iter: I) -> Self {
        Bound { ids: iter.into_iter().collect() }
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new(AdamConfig::default())
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(adam: AdamConfig) -> Self {
        ParamStore { params: BTreeMap::new(), adam, step: 0 }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Invalid(format!("parameter `{name}` already exists")));
        }
        let zeros = Tensor::zeros(value.shape());
        self.params.insert(name.to_string(), Param { m: zeros.clone(), v: zeros, value, grad: None });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).map(|p| &p.value).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params.get_mut(name).map(|p| &mut p.value).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
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

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor<T>) -> Result<()> {
        let p = self.params.get_mut(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if grad.shape() != p.value.shape() {
            return Err(Error::shape("set_grad", format!("`{name}` is {:?}, grad is {:?}", p.value.shape(), grad.shape())));
        }
        p.grad = Some(grad);
        Ok(())
    }

    /// Inserts every parameter into `graph` as a variable leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> Bound {
        let ids = self.params.iter().map(|(k, p)| (k.clone(), graph.variable(p.value.clone()))).collect();
        Bound { ids }
    }

    /// Inserts every parameter as a constant (inference).
    pub fn bind_frozen(&self, graph: &mut Graph<T>) -> Bound {
        let ids = self.params.iter().map(|(k, p)| (k.clone(), graph.constant(p.value.clone()))).collect();
        Bound { ids }
    }

    /// Moves gradients from a graph after `backward` into the store.
    pub fn collect_grads(&mut self, graph: &mut Graph<T>, bound: &Bound) {
        for (name, &id) in &bound.ids {
            if let (Some(p), Some(g)) = (self.params.get_mut(name), graph.take_grad(id)) {
                p.grad = Some(g);
            }
        }
    }

    /// One adaptive-moment update; clears gradients and advances the step counter.
    pub fn optimizer_step(&mut self, learning_rate: f64) -> Result<()> {
        if let Some((name, _)) = self.params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::MissingGradient(name.clone()));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (c1, c2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let (lr, eps) = (T::of(learning_rate), T::of(eps));
        let (inv_bias1, inv_bias2) = (T::of(1.0 / bias1), T::of(1.0 / bias2));
        for p in self.params.values_mut() {
            let g = p.grad.take().expect("checked above");
            let (w, m, v) = (p.value.data_mut(), p.m.data_mut(), p.v.data_mut());
            for i in 0..w.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + c1 * gi;
                v[i] = b2 * v[i] + c2 * gi * gi;
                let mhat = m[i] * inv_bias1;
                let vhat = v[i] * inv_bias2;
                w[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Plain snapshot of the values, keyed by name.
    pub fn to_snapshot(&self) -> ParamSnapshot {
        ParamSnapshot {
            step: self.step,
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (k.clone(), SnapshotEntry { shape: p.value.shape().to_vec(), data: p.value.data().iter().map(|v| v.as_f64()).collect() })
                })
                .collect(),
        }
    }

    pub fn from_snapshot(snap: &ParamSnapshot, adam: AdamConfig) -> Result<Self> {
        let mut store = ParamStore::new(adam);
        for (k, e) in &snap.params {
            store.insert(k, Tensor::from_vec(&e.shape, e.data.iter().map(|&v| T::of(v)).collect())?)?;
        }
        store.step = snap.step;
        Ok(store)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serializable parameter values (optimizer moments are not persisted).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub step: u64,
    pub params: BTreeMap<String, SnapshotEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::default();
        s.insert("w", Tensor::scalar(w)).unwrap();
        s
    }

    #[test]
    fn descends_along_negative_gradient() {
        let mut s = scalar_store(1.0);
        s.set_grad("w", Tensor::scalar(1.0)).unwrap();
        s.optimizer_step(0.1).unwrap();
        assert!(s.get("w").unwrap().data()[0] < 1.0);
        assert_eq!(s.step_count(), 1);
        assert!(s.iter().all(|(_, p)| p.grad.is_none()));
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = scalar_store(0.7);
        s.set_grad("w", Tensor::scalar(0.0)).unwrap();
        s.optimizer_step(0.1).unwrap();
        assert_eq!(s.get("w").unwrap().data()[0], 0.7);
    }

    #[test]
    fn first_two_steps_match_closed_form() {
        // With bias correction, m_hat = g and v_hat = g^2 on both of the first
        // two steps, so each step moves by lr * g / (|g| + eps).
        let (g, lr) = (0.3, 0.05);
        let mut s = scalar_store(2.0);
        let mut trace = vec![2.0];
        for _ in 0..2 {
            s.set_grad("w", Tensor::scalar(g)).unwrap();
            s.optimizer_step(lr).unwrap();
            trace.push(s.get("w").unwrap().data()[0]);
        }
        let delta = lr * g / (g + 1e-8);
        assert!((trace[1] - (2.0 - delta)).abs() < 1e-12);
        assert!((trace[2] - (2.0 - 2.0 * delta)).abs() < 1e-12);
        assert!(trace[0] > trace[1] && trace[1] > trace[2]);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        s.insert("bias", Tensor::scalar(0.0)).unwrap();
        s.set_grad("w", Tensor::scalar(1.0)).unwrap();
        let err = s.optimizer_step(0.1).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "bias"));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = scalar_store(1.0);
        assert!(s.insert("w", Tensor::scalar(2.0)).is_err());
    }
}
