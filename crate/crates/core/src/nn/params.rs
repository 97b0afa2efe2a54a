use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a tensor owned by a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, trainable tensors of one model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Ids whose name starts with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |&id| self.names[id.0].starts_with(prefix))
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    /// Overwrites a parameter, keeping its shape.
    pub fn set(&mut self, id: ParamId, tensor: Tensor<T>) -> Result<()> {
        if self.tensors[id.0].shape() != tensor.shape() {
            return shape_err(
                "set",
                format!(
                    "`{}` is {:?}, got {:?}",
                    self.names[id.0],
                    self.tensors[id.0].shape(),
                    tensor.shape()
                ),
            );
        }
        self.tensors[id.0] = tensor;
        Ok(())
    }

    /// Copies every tensor of `other` whose name (after replacing
    /// `from_prefix` with `to_prefix`) exists here. Returns how many were
    /// copied.
    pub fn copy_from<U: Scalar>(
        &mut self,
        other: &ParamStore<U>,
        from_prefix: &str,
        to_prefix: &str,
    ) -> Result<usize> {
        let mut n = 0;
        for (name, t) in other.iter() {
            if let Some(rest) = name.strip_prefix(from_prefix) {
                let target = format!("{to_prefix}{rest}");
                if let Some(id) = self.id(&target) {
                    self.set(id, t.cast())?;
                    n += 1;
                }
            }
        }
        Ok(n)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    pub fn fill(&mut self, value: T) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = value);
        }
    }
}

/// Gradient buffers, one slot per parameter of the store they came from.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn empty(n: usize) -> Self {
        Gradients {
            slots: vec![None; n],
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: Tensor<T>) {
        match &mut self.slots[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Gradient of a parameter; `None` means the parameter was unreachable
    /// (its gradient is zero).
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    /// Dense gradient, zero-filled for unreachable parameters.
    pub fn dense(&self, id: ParamId, store: &ParamStore<T>) -> Tensor<T> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor<T>> {
        self.slots.get_mut(id.0).and_then(Option::as_mut)
    }

    pub fn add(&mut self, other: &Gradients<T>) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g.clone());
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.slots.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> T {
        self.slots
            .iter()
            .flatten()
            .map(Tensor::sq_norm)
            .sum::<T>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn check_finite(&self, store: &ParamStore<T>) -> Result<()> {
        for (i, g) in self.slots.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient(store.name(ParamId(i)).to_string()));
                }
            }
        }
        Ok(())
    }
}

/// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))` for a `fan_in × fan_out` matrix.
pub fn init_fan_in<T: Scalar, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::c(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("valid shape")
}

pub fn init_normal<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("valid std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::c(normal.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("valid shape")
}
