use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Scalar;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether newly created operations record a backward graph on this thread.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Disables graph recording until dropped.
#[must_use = "gradients are re-enabled when the guard is dropped"]
pub struct NoGradGuard {
    prev: bool,
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Backward rule: given the output gradient, the output data and the parents,
/// returns one optional gradient per parent.
pub(crate) type BackwardFn<F> = Box<dyn Fn(&[F], &[F], &[Tensor<F>]) -> Vec<Option<Vec<F>>>>;

pub(crate) struct Node<F: Scalar> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<F>>,
    requires_grad: Cell<bool>,
    parents: Vec<Tensor<F>>,
    backward: Option<BackwardFn<F>>,
}

/// A dense row-major n-dimensional array that optionally records the
/// operations producing it, so that gradients can be propagated back to leaves.
///
/// Cloning is cheap and shares the underlying node.
pub struct Tensor<F: Scalar>(pub(crate) Rc<Node<F>>);

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<F: Scalar> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let head: Vec<F> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.requires_grad())
            .field("data", &head)
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Scalar> Tensor<F> {
    fn make(
        shape: Vec<usize>,
        data: Vec<F>,
        requires_grad: bool,
        parents: Vec<Tensor<F>>,
        backward: Option<BackwardFn<F>>,
    ) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            requires_grad: Cell::new(requires_grad),
            parents,
            backward,
        }))
    }

    /// Constant leaf tensor.
    pub fn from_vec(data: Vec<F>, shape: &[usize]) -> Self {
        Self::make(shape.to_vec(), data, false, Vec::new(), None)
    }

    /// Leaf tensor that receives a gradient on [`Tensor::backward`].
    pub fn var(data: Vec<F>, shape: &[usize]) -> Self {
        Self::make(shape.to_vec(), data, true, Vec::new(), None)
    }

    pub fn from_f64s(data: &[f64], shape: &[usize]) -> Self {
        Self::from_vec(data.iter().map(|&x| F::of(x)).collect(), shape)
    }

    pub fn scalar(x: F) -> Self {
        Self::from_vec(vec![x], &[])
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        Self::from_vec(vec![value; numel(shape)], shape)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, F::one())
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| {
                let x: f64 = StandardNormal.sample(rng);
                F::of(x)
            })
            .collect();
        Self::from_vec(data, shape)
    }

    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], low: f64, high: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| F::of(rng.random_range(low..high)))
            .collect();
        Self::from_vec(data, shape)
    }

    /// Output of a differentiable operation. The graph edge is only kept when
    /// recording is enabled and some parent requires a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<F>,
        parents: Vec<Tensor<F>>,
        backward: impl Fn(&[F], &[F], &[Tensor<F>]) -> Vec<Option<Vec<F>>> + 'static,
    ) -> Self {
        let track = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Self::make(shape, data, true, parents, Some(Box::new(backward)))
        } else {
            Self::make(shape, data, false, Vec::new(), None)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dims(&self) -> usize {
        self.0.shape.len()
    }

    /// Size of dimension `axis`; negative values count from the end.
    pub fn dim(&self, axis: isize) -> usize {
        self.0.shape[self.axis(axis)]
    }

    pub(crate) fn axis(&self, axis: isize) -> usize {
        let rank = self.dims() as isize;
        let a = if axis < 0 { axis + rank } else { axis };
        assert!(
            (0..rank).contains(&a),
            "axis {axis} out of range for shape {:?}",
            self.shape()
        );
        a as usize
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.get()
    }

    /// Only meaningful on leaves: toggles whether a parameter participates in
    /// gradient computation.
    pub fn set_requires_grad(&self, flag: bool) {
        assert!(self.is_leaf(), "requires_grad can only be set on leaf tensors");
        self.0.requires_grad.set(flag);
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<F>> {
        self.0.data.borrow()
    }

    /// Mutable access for in-place updates of leaves (optimizer steps).
    pub fn data_mut(&self) -> RefMut<'_, Vec<F>> {
        assert!(self.is_leaf(), "in-place mutation of a graph node");
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.0.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.borrow().iter().map(|x| x.as_f64()).collect()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> F {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    /// A constant copy cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::from_vec(self.to_vec(), self.shape())
    }

    /// Reverse-mode differentiation seeded with ones.
    pub fn backward(&self) -> Gradients<F> {
        self.backward_with(vec![F::one(); self.numel()])
    }

    pub fn backward_with(&self, seed: Vec<F>) -> Gradients<F> {
        assert_eq!(seed.len(), self.numel(), "seed gradient has the wrong size");
        let mut leaves = HashMap::new();
        if !self.requires_grad() {
            return Gradients { map: leaves };
        }

        // Post-order over the recorded graph: parents precede children.
        let mut order: Vec<Tensor<F>> = Vec::new();
        let mut visited = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.0.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        let mut pending: HashMap<usize, Vec<F>> = HashMap::new();
        pending.insert(self.id(), seed);
        for t in order.iter().rev() {
            let Some(grad) = pending.remove(&t.id()) else {
                continue;
            };
            match &t.0.backward {
                None => {
                    leaves.insert(t.id(), grad);
                }
                Some(rule) => {
                    let out = t.0.data.borrow();
                    let parent_grads = rule(&grad, &out, &t.0.parents);
                    debug_assert_eq!(parent_grads.len(), t.0.parents.len());
                    for (p, g) in t.0.parents.iter().zip(parent_grads) {
                        let Some(g) = g else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.len(), p.numel());
                        match pending.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                            None => {
                                pending.insert(p.id(), g);
                            }
                        }
                    }
                }
            }
        }
        Gradients { map: leaves }
    }
}

/// Gradients of a scalar with respect to the leaves of its graph.
#[derive(Debug, Default)]
pub struct Gradients<F> {
    map: HashMap<usize, Vec<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, t: &Tensor<F>) -> Option<&[F]> {
        self.map.get(&t.id()).map(|v| v.as_slice())
    }

    pub fn take(&mut self, t: &Tensor<F>) -> Option<Vec<F>> {
        self.map.remove(&t.id())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
