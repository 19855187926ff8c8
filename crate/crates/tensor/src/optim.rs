//! Adam, gradient clipping and learning-rate schedules.

use crate::{Gradients, ParamStore, Scalar};

/// Gradients of one store's parameters in registration order; `None` where a
/// parameter did not take part in the loss.
pub fn collect_grads<F: Scalar>(store: &ParamStore<F>, grads: &Gradients<F>) -> Vec<Option<Vec<F>>> {
    store.tensors().map(|t| grads.get(t).map(|g| g.to_vec())).collect()
}

pub fn global_norm<F: Scalar>(grads: &[Option<Vec<F>>]) -> F {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|&x| x * x)
        .sum::<F>()
        .sqrt()
}

/// Rescales `grads` so that their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Scalar>(grads: &mut [Option<Vec<F>>], max_norm: F) -> F {
    let norm = global_norm(grads);
    if norm > max_norm && norm > F::zero() {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}

#[derive(Clone, Debug)]
pub struct Adam<F: Scalar> {
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let zeros: Vec<Vec<F>> = store.tensors().map(|t| vec![F::zero(); t.numel()]).collect();
        Self {
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps: F::of(1e-8),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &ParamStore<F>, grads: &[Option<Vec<F>>], lr: F) {
        assert_eq!(grads.len(), store.len(), "gradient list does not match the store");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        for (i, (param, grad)) in store.tensors().zip(grads).enumerate() {
            let Some(grad) = grad else { continue };
            let mut data = param.data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..grad.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (F::one() - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (F::one() - self.beta2) * g * g;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                data[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }

    /// Moment buffers, for checkpointing.
    pub fn state(&self) -> (u64, &[Vec<F>], &[Vec<F>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn set_state(&mut self, step: u64, m: Vec<Vec<F>>, v: Vec<Vec<F>>) {
        assert_eq!(m.len(), self.m.len(), "optimizer state size mismatch");
        assert_eq!(v.len(), self.v.len(), "optimizer state size mismatch");
        self.step = step;
        self.m = m;
        self.v = v;
    }
}

/// Linear warmup from zero followed by optional cosine annealing to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: u64,
    /// total steps of the cosine phase's horizon (including warmup); `None` keeps the base rate
    pub total_steps: Option<u64>,
}

impl LrSchedule {
    pub fn constant_after_warmup(base: f64, warmup_steps: u64) -> Self {
        Self {
            base,
            warmup_steps,
            total_steps: None,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.base * step as f64 / self.warmup_steps as f64;
        }
        match self.total_steps {
            None => self.base,
            Some(total) if total <= self.warmup_steps => self.base,
            Some(total) => {
                let progress = ((step - self.warmup_steps) as f64
                    / (total - self.warmup_steps) as f64)
                    .min(1.0);
                0.5 * self.base * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}
