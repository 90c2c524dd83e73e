//! Named, ordered parameter and buffer storage.
//!
//! Every trainable array belongs to exactly one named group; registration
//! order is the serialization and optimizer order, so it must be identical
//! across builds with the same configuration.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorData, TensorId};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashMap;

/// One named array of trainable scalars.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of parameters with unique names.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    items: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "group {name}: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        if self.index.contains_key(name) {
            return Err(Error::usage(format!("duplicate parameter group {name}")));
        }
        self.index.insert(name.to_string(), self.items.len());
        self.items.push(Param { name: name.to_string(), shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.index
            .get(name)
            .map(|&i| &self.items[i])
            .ok_or_else(|| Error::usage(format!("unknown parameter group {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.items[i]),
            None => Err(Error::usage(format!("unknown parameter group {name}"))),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.items.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param> {
        self.items.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total scalar count across all groups.
    pub fn scalar_count(&self) -> usize {
        self.items.iter().map(|p| p.data.len()).sum()
    }

    /// Group sizes in registration order, for optimizer construction.
    pub fn group_sizes(&self) -> Vec<usize> {
        self.items.iter().map(|p| p.data.len()).collect()
    }

    /// Copy current values out in registration order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.items.iter().map(|p| p.data.clone()).collect()
    }

    /// Overwrite all groups from registration-order slices.
    pub fn restore(&mut self, values: &[Vec<f64>]) -> Result<()> {
        if values.len() != self.items.len() {
            return Err(Error::usage(format!(
                "expected {} parameter groups, got {}",
                self.items.len(),
                values.len()
            )));
        }
        for (p, v) in self.items.iter_mut().zip(values) {
            if p.data.len() != v.len() {
                return Err(Error::dim(format!(
                    "group {}: expected {} values, got {}",
                    p.name,
                    p.data.len(),
                    v.len()
                )));
            }
            p.data.copy_from_slice(v);
        }
        Ok(())
    }
}

/// Graph bindings of every parameter group for one forward pass.
pub struct BoundParams {
    ids: HashMap<String, TensorId>,
    order: Vec<String>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> Result<TensorId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::usage(format!("parameter group {name} is not bound")))
    }

    /// Gradients in registration order; errors if any group is missing one.
    pub fn collect_grads(&self, g: &Graph) -> Result<Vec<Vec<f64>>> {
        self.order
            .iter()
            .map(|name| {
                let id = self.ids[name];
                g.grad(id)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::usage(format!("missing gradient for group {name}")))
            })
            .collect()
    }
}

impl ParamSet {
    /// Bind every group as a graph leaf, trainable or frozen.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let mut ids = HashMap::with_capacity(self.items.len());
        let mut order = Vec::with_capacity(self.items.len());
        for p in &self.items {
            let t = TensorData::new(p.shape.clone(), p.data.clone())
                .expect("stored parameter shapes are always consistent");
            ids.insert(p.name.clone(), g.leaf(t, trainable));
            order.push(p.name.clone());
        }
        BoundParams { ids, order }
    }
}

/// Non-trainable running statistics, keyed like parameters.
#[derive(Debug, Clone, Default)]
pub struct BufferSet {
    items: Vec<Param>,
    index: HashMap<String, usize>,
}

impl BufferSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "buffer {name}: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        if self.index.contains_key(name) {
            return Err(Error::usage(format!("duplicate buffer {name}")));
        }
        self.index.insert(name.to_string(), self.items.len());
        self.items.push(Param { name: name.to_string(), shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.index
            .get(name)
            .map(|&i| &self.items[i])
            .ok_or_else(|| Error::usage(format!("unknown buffer {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.items[i]),
            None => Err(Error::usage(format!("unknown buffer {name}"))),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Draws He-scaled normal weights: std = sqrt(2 / fan_in), biases zero.
pub struct Initializer<R: Rng> {
    rng: R,
}

impl<R: Rng> Initializer<R> {
    pub fn new(rng: R) -> Self {
        Self { rng }
    }

    pub fn he_weights(&mut self, shape: &[usize], fan_in: usize) -> Vec<f64> {
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("std is finite and positive");
        let n: usize = shape.iter().product();
        (0..n).map(|_| dist.sample(&mut self.rng)).collect()
    }
}
