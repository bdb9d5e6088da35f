//! Named parameter collections.

use crate::error::{Error, Result};
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;

/// Ordered map from parameter name (`encoder.conv1.weight`, `predictor.m`,
/// ...) to its tensor. Iteration order is insertion order, which fixes the
/// optimizer and serialization order deterministically.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams<E> {
    entries: Vec<(String, Tensor<E>)>,
}

impl<E: Real> ModelParams<E> {
    pub fn new() -> Self {
        ModelParams { entries: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<E>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::contract(format!("duplicate parameter name {name:?}")));
        }
        self.entries.push((name, tensor.with_requires_grad(true)));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<E>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<E>> {
        self.get(name).ok_or_else(|| Error::contract(format!("missing parameter {name:?}")))
    }

    pub fn require_mut(&mut self, name: &str) -> Result<&mut Tensor<E>> {
        self.get_mut(name)
            .ok_or_else(|| Error::contract(format!("missing parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<E>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Clones the parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ModelParams<E> {
        ModelParams {
            entries: self
                .entries
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .cloned()
                .collect(),
        }
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.entries.iter_mut() {
            t.zero_grad();
        }
    }

    pub fn cast<T: Real>(&self) -> ModelParams<T> {
        ModelParams {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }
}

impl<E: Real> FromIterator<(String, Tensor<E>)> for ModelParams<E> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<E>)>>(iter: I) -> Self {
        let mut params = ModelParams::new();
        for (name, tensor) in iter {
            params.insert(name, tensor).expect("duplicate parameter name in iterator");
        }
        params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_rejects_duplicates_and_preserves_order() {
        let mut p: ModelParams<f32> = ModelParams::new();
        p.insert("b", Tensor::zeros(vec![2])).unwrap();
        p.insert("a", Tensor::zeros(vec![3])).unwrap();
        assert!(p.insert("b", Tensor::zeros(vec![2])).is_err());
        let names: Vec<&str> = p.names().collect();
        assert_eq!(names, vec!["b", "a"]);
        assert_eq!(p.num_values(), 5);
    }

    #[test]
    fn subset_filters_by_prefix() {
        let mut p: ModelParams<f32> = ModelParams::new();
        p.insert("encoder.w", Tensor::zeros(vec![2])).unwrap();
        p.insert("predictor.m", Tensor::zeros(vec![4])).unwrap();
        p.insert("encoder.b", Tensor::zeros(vec![1])).unwrap();
        let enc = p.subset("encoder.");
        let names: Vec<&str> = enc.names().collect();
        assert_eq!(names, vec!["encoder.w", "encoder.b"]);
    }
}
