use std::collections::HashMap;

use rand::Rng;

use crate::num::Scalar;

use super::{Graph, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Named, ordered parameter set. Order is insertion order and is stable
/// across save/load, which keeps optimizer state aligned with parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Adds a parameter. Re-using a name replaces the previous value.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.params[i].value = value;
            self.params[i].trainable = trainable;
            return;
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value,
            trainable,
        });
    }

    /// Uniform He-style initialisation: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn insert_he_uniform<R: Rng>(
        &mut self,
        rng: &mut R,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
    ) {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)));
        self.insert(name, t, true);
    }

    pub fn insert_full(&mut self, name: impl Into<String>, shape: &[usize], value: f64) {
        self.insert(name, Tensor::full(shape, T::of(value)), true);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(move |i| &mut self.params[i].value)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<(), TensorError> {
        let i = self
            .position(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        self.params[i].trainable = trainable;
        Ok(())
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Places every parameter on `g` as a leaf; frozen parameters do not track gradients.
    pub fn bind<'a>(&'a self, g: &mut Graph<T>) -> BoundParams<'a, T> {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), p.trainable))
            .collect();
        BoundParams { store: self, vars }
    }

    /// Like [`bind`](Self::bind) but every parameter is a constant (inference).
    pub fn bind_frozen<'a>(&'a self, g: &mut Graph<T>) -> BoundParams<'a, T> {
        let vars = self
            .params
            .iter()
            .map(|p| g.constant(p.value.clone()))
            .collect();
        BoundParams { store: self, vars }
    }
}

/// Graph handles for a [`ParamStore`], looked up by parameter name.
pub struct BoundParams<'a, T> {
    store: &'a ParamStore<T>,
    vars: Vec<Var>,
}

impl<T: Scalar> BoundParams<'_, T> {
    pub fn var(&self, name: &str) -> Result<Var, TensorError> {
        self.store
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    /// Substitutes the handle of one parameter, e.g. to differentiate with respect to it.
    pub fn replace(&mut self, name: &str, var: Var) -> Result<(), TensorError> {
        let i = self
            .store
            .position(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        self.vars[i] = var;
        Ok(())
    }

    /// Variables in store order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
