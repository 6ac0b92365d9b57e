use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named collection of trainable tensors, addressed by dotted paths such as
/// `image.ntb0.rb1.conv0.weight`. Iteration order is insertion order, which
/// keeps optimizer updates and serialization deterministic.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterSet<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let path = path.into();
        if self.entries.contains_key(&path) {
            return Err(Error::DuplicateParameter(path));
        }
        self.entries.insert(path, tensor);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.entries.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(path)
    }

    pub fn index_of(&self, path: &str) -> Option<usize> {
        self.entries.get_index_of(path)
    }

    pub fn by_index(&self, index: usize) -> &Tensor<T> {
        &self.entries[index]
    }

    pub fn by_index_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.entries[index]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Number of scalar weights.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Elementwise accumulation; both sets must share paths and shapes.
    pub fn add_assign(&mut self, other: &Self) {
        for ((ka, a), (kb, b)) in self.entries.iter_mut().zip(&other.entries) {
            debug_assert_eq!(ka, kb);
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.entries.values_mut() {
            t.scale(s);
        }
    }

    pub fn sq_norm(&self) -> T {
        self.entries.values().map(Tensor::sq_norm).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }

    /// Sets every tensor whose path starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (k, v) in self.entries.iter_mut() {
            if k.starts_with(prefix) {
                v.data_mut().iter_mut().for_each(|x| *x = T::zero());
            }
        }
    }

    /// Human-readable differences in paths or shapes; empty when compatible.
    pub fn shape_diff(&self, other: &Self) -> Vec<String> {
        let mut diff = Vec::new();
        for (k, v) in &self.entries {
            match other.entries.get(k) {
                None => diff.push(format!("- {k} {:?}", v.shape())),
                Some(o) if o.shape() != v.shape() => {
                    diff.push(format!("~ {k} {:?} -> {:?}", v.shape(), o.shape()))
                }
                _ => {}
            }
        }
        for (k, v) in &other.entries {
            if !self.entries.contains_key(k) {
                diff.push(format!("+ {k} {:?}", v.shape()));
            }
        }
        diff
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}
