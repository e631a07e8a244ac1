//! Named parameter storage.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Which group of tasks may share a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    Encoder,
    Seg,
    Cls,
}

/// How a parameter is owned across tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    /// Prunable kernel shared by every task of the family.
    Shared(Family),
    /// Private per-task copy (biases, normalization affine, lead adapter, heads).
    Exclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    He { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_shared(&self) -> bool {
        matches!(self.role, Role::Shared(_))
    }

    pub fn family(&self) -> Option<Family> {
        match self.role {
            Role::Shared(f) => Some(f),
            Role::Exclusive => None,
        }
    }

    pub fn initial_values<T: Real>(&self, rng: &mut impl Rng) -> Vec<T> {
        let n = self.numel();
        match self.init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::He { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| T::of(dist.sample(rng))).collect()
            }
        }
    }
}

/// A trainable array with its gradient buffer and per-scalar trainable flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub values: Tensor<T>,
    pub grad: Vec<T>,
    pub trainable: Vec<bool>,
}

impl<T: Real> Parameter<T> {
    pub fn new(values: Tensor<T>) -> Self {
        let n = values.len();
        Parameter {
            values,
            grad: vec![T::zero(); n],
            trainable: vec![true; n],
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Adds `g` and re-zeroes frozen entries.
    pub fn accumulate(&mut self, g: &[T]) {
        for ((acc, &v), &t) in self.grad.iter_mut().zip(g).zip(&self.trainable) {
            if t {
                *acc += v;
            } else {
                *acc = T::zero();
            }
        }
    }

    pub fn set_trainable(&mut self, on: bool) {
        self.trainable.iter_mut().for_each(|t| *t = on);
    }
}

/// Parameters addressed by name, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Parameter<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }

    pub fn init_from_specs<'a>(specs: impl IntoIterator<Item = &'a ParamSpec>, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        for s in specs {
            let t = Tensor::from_vec(&s.shape, s.initial_values(rng)).expect("spec shape");
            store.insert(&s.name, Parameter::new(t));
        }
        store
    }

    pub fn insert(&mut self, name: &str, p: Parameter<T>) {
        self.params.insert(name.to_string(), p);
    }

    pub fn get(&self, name: &str) -> Result<&Parameter<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("no parameter named `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Lookup(format!("no parameter named `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Parameter<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.values.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Parameter::zero_grad);
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Parameter {
                            values: p.values.cast(),
                            grad: p.grad.iter().map(|g| U::of(g.as_f64())).collect(),
                            trainable: p.trainable.clone(),
                        },
                    )
                })
                .collect(),
        }
    }
}
