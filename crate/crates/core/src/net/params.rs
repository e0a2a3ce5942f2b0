use std::collections::HashMap;

use crate::tensor::{Scalar, Tensor};

/// Named, ordered tensors. Trainable parameters and non-trainable buffers
/// (running statistics) live in separate stores.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    /// Panics on a duplicate name; names are generated by the model builder.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let name = name.into();
        let id = self.values.len();
        assert!(self.index.insert(name.clone(), id).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.values[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(move |i| &mut self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}
