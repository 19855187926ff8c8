//! Named parameter collections and their initialization.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::numel;
use crate::{Scalar, Tensor};

/// Ordered set of named trainable leaves belonging to one model component.
#[derive(Clone, Default)]
pub struct ParamStore<F: Scalar> {
    params: Vec<(String, Tensor<F>)>,
}

impl<F: Scalar> std::fmt::Debug for ParamStore<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.params.len())
            .field("elements", &self.num_elements())
            .finish()
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    Uniform(f64),
    Normal(f64),
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Registers a leaf under `name`. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> Tensor<F> {
        let name = name.into();
        assert!(
            self.get(&name).is_none(),
            "parameter {name} registered twice"
        );
        assert!(tensor.is_leaf(), "parameters must be leaves");
        tensor.set_requires_grad(true);
        self.params.push((name, tensor.clone()));
        tensor
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.params.iter().map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn set_requires_grad(&self, flag: bool) {
        for (_, t) in &self.params {
            t.set_requires_grad(flag);
        }
    }

    /// Flat snapshot of all values, in registration order.
    pub fn snapshot(&self) -> Vec<Vec<F>> {
        self.params.iter().map(|(_, t)| t.to_vec()).collect()
    }

    /// Overwrites values from a store with identical names and shapes.
    pub fn copy_from(&self, other: &ParamStore<F>) {
        assert_eq!(self.len(), other.len(), "parameter stores differ in size");
        for ((na, a), (nb, b)) in self.params.iter().zip(&other.params) {
            assert!(na == nb && a.shape() == b.shape(), "parameter {na} does not match {nb}");
            a.data_mut().copy_from_slice(&b.data());
        }
    }

    /// `self <- decay * self + (1 - decay) * other`, parameter-wise.
    pub fn ema_from(&self, other: &ParamStore<F>, decay: F) {
        assert_eq!(self.len(), other.len(), "parameter stores differ in size");
        let keep = F::one() - decay;
        for ((na, a), (_, b)) in self.params.iter().zip(&other.params) {
            assert_eq!(a.shape(), b.shape(), "parameter {na} shape mismatch");
            let src = b.data();
            for (x, &y) in a.data_mut().iter_mut().zip(src.iter()) {
                *x = decay * *x + keep * y;
            }
        }
    }
}

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a, F: Scalar> {
    store: &'a mut ParamStore<F>,
    rng: &'a mut dyn RngCore,
    prefix: String,
}

impl<'a, F: Scalar> Builder<'a, F> {
    pub fn new(store: &'a mut ParamStore<F>, rng: &'a mut dyn RngCore) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Nested builder whose names are prefixed by `name.`.
    pub fn sub(&mut self, name: &str) -> Builder<'_, F> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Builder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Tensor<F> {
        let n = numel(shape);
        let data: Vec<F> = match init {
            Init::Zeros => vec![F::zero(); n],
            Init::Ones => vec![F::one(); n],
            Init::Constant(c) => vec![F::of(c); n],
            Init::Uniform(bound) => (0..n)
                .map(|_| F::of(self.rng.random_range(-bound..=bound)))
                .collect(),
            Init::Normal(std) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut *self.rng);
                    F::of(std * z)
                })
                .collect(),
        };
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        self.store.insert(full, Tensor::var(data, shape))
    }
}
