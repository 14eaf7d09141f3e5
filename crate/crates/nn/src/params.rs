use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{NnError, Result};
use crate::graph::Gradients;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Initial values for a new parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)`.
    FanIn(usize),
    Normal(f64),
    Constant(f64),
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub trainable: bool,
}

/// Named trainable arrays with gradient slots and Adam moments.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, ParamId>,
    /// Adam step counter.
    pub step: u64,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut impl Rng) -> Result<ParamId> {
        let count: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                (0..count).map(|_| T::of(dist.sample(rng))).collect()
            }
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).map_err(|e| NnError::State(e.to_string()))?;
                (0..count).map(|_| T::of(dist.sample(rng))).collect()
            }
            Init::Constant(c) => vec![T::of(c); count],
        };
        self.insert(name, Tensor::from_vec(shape, data)?)
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(NnError::State(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let n = value.len();
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: None,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            trainable: true,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Marks every parameter whose name starts with `prefix` as (non-)trainable.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) -> usize {
        let mut hit = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
            hit += 1;
        }
        hit
    }

    /// Zero-filled gradient slots for every trainable parameter.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = p.trainable.then(|| vec![T::zero(); p.value.len()]);
        }
    }

    pub fn clear_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds per-example gradients into the slots; trainable slots are created on demand.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(NnError::State(format!(
                "gradients for {} parameters, store has {}",
                grads.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(grads.iter()) {
            let Some(g) = g else { continue };
            if !p.trainable {
                continue;
            }
            let slot = p.grad.get_or_insert_with(|| vec![T::zero(); g.len()]);
            for (s, &x) in slot.iter_mut().zip(g) {
                *s += x;
            }
        }
        Ok(())
    }

    /// Copy of all values, for freeze/determinism comparisons.
    pub fn snapshot(&self) -> Vec<(String, Vec<T>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.data().to_vec()))
            .collect()
    }

    /// Converts to another precision; moments and step counter carry over.
    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        let conv = |v: &[T]| v.iter().map(|&x| U::of(x.as_f64())).collect::<Vec<U>>();
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.as_deref().map(conv),
                    m: conv(&p.m),
                    v: conv(&p.v),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
            step: self.step,
        }
    }
}
