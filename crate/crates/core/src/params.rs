use crate::error::NnError;
use crate::tensor::{Real, Tensor};

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<R: Real> {
    entries: Vec<(String, Tensor<R>)>,
}

impl<R: Real> Default for ParamStore<R> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `name`, keeping first-insertion order.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<R>) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.entries.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<R>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<R>, NnError> {
        self.get(name).ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<R>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// A store with the same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Adds `tensor` into the entry `name`, creating it if absent.
    pub fn accumulate(&mut self, name: &str, tensor: &Tensor<R>) -> Result<(), NnError> {
        match self.get_mut(name) {
            Some(t) => t.add_assign(tensor),
            None => {
                self.entries.push((name.to_string(), tensor.clone()));
                Ok(())
            }
        }
    }

    pub fn convert<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.convert())).collect(),
        }
    }
}
