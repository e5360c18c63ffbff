//! Named parameter registry.
//!
//! Every trainable tensor lives here under a unique dotted name, in
//! registration order. That order is the checkpoint order.

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f32>>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid("param", format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.grads.push(None);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    fn position(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.values[self.position(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = self.position(name)?;
        Ok(&mut self.values[i])
    }

    pub fn grad(&self, name: &str) -> Result<Option<&[f32]>> {
        Ok(self.grads[self.position(name)?].as_deref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn element_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Copies gradients of every parameter bound on `tape` into the store.
    /// Parameters not bound (or not reached by backward) are left without a
    /// gradient.
    pub fn collect_grads(&mut self, tape: &Tape) {
        self.zero_grads();
        for (name, var) in tape.bindings() {
            if let (Some(&i), Some(g)) = (self.index.get(name), tape.grad(var)) {
                self.grads[i] = Some(g.to_vec());
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub(crate) fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, Option<&[f32]>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter_mut())
            .zip(self.grads.iter())
            .map(|((n, v), g)| (n, v, g.as_deref()))
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape() == b.shape())
    }
}

/// Normal(0, std) resampled outside ±2·std.
pub fn truncated_normal(shape: &[usize], std: f32, rng: &mut Rng) -> Tensor {
    let normal = Normal::new(0.0f32, std).expect("std is positive");
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}
