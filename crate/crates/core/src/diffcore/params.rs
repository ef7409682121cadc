use std::collections::BTreeMap;

use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Named tensors iterated in lexicographic path order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterSet<T> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Inserts a new entry; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn replace(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(slot) if slot.shape() == value.shape() => {
                *slot = value;
                Ok(())
            }
            Some(slot) => Err(Error::shape("replace", slot.shape(), value.shape())),
            None => Err(Error::Config(format!("unknown parameter {name}"))),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar elements.
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

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Tensor::all_finite)
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_aligned<U: Scalar>(&self, other: &ParameterSet<U>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Config(format!(
                "parameter sets differ in size: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((a, ta), (b, tb)) in self.iter().zip(other.iter()) {
            if a != b {
                return Err(Error::Config(format!("parameter {a} paired with {b}")));
            }
            if ta.shape() != tb.shape() {
                return Err(Error::shape("parameter set", ta.shape(), tb.shape()));
            }
        }
        Ok(())
    }
}

impl<T> FromIterator<(String, Tensor<T>)> for ParameterSet<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}
