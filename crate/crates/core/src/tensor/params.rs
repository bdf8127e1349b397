use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor};
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

/// Named tensors keyed by dot-separated path, iterated in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(TensorError::invalid("param_store", format!("duplicate entry `{name}`")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries.get(name).ok_or_else(|| TensorError::Missing(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries.get_mut(name).ok_or_else(|| TensorError::Missing(name.to_string()))
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

    /// Copies the gradients of every parameter registered on `tape` into the
    /// matching entries. Parameters the loss never reached get zero gradient.
    pub fn load_grads(&mut self, tape: &Tape<T>) -> Result<()> {
        for (name, var) in tape.params() {
            let entry = self.get_mut(name)?;
            entry.grad = Some(match tape.grad(*var) {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); entry.numel()],
            });
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for t in self.entries.values_mut() {
            t.grad = None;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}

/// Total number of scalar entries across the store.
pub fn count_params<T: Scalar>(store: &ParamStore<T>) -> usize {
    store.iter().map(|(_, t)| t.numel()).sum()
}

/// Seeded parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// He-style uniform in `±sqrt(6 / fan_in)`.
    pub fn kaiming_uniform<T: Scalar>(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        self.uniform(shape, bound)
    }

    pub fn uniform<T: Scalar>(&mut self, shape: Vec<usize>, bound: f64) -> Tensor<T> {
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| T::lit(self.rng.random_range(-bound..=bound))).collect();
        Tensor::new(shape, data).expect("shape matches generated data")
    }
}
