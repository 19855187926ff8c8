//! Softmax and normalization kernels with fused backward rules.

use crate::ops::shape::split_at_axis;
use crate::{Scalar, Tensor};

impl<F: Scalar> Tensor<F> {
    /// Softmax along `axis`. Entries equal to `-inf` receive exactly zero weight.
    pub fn softmax(&self, axis: isize) -> Tensor<F> {
        let ax = self.axis(axis);
        let (outer, len, inner) = split_at_axis(self.shape(), ax);
        let mut out = vec![F::zero(); self.numel()];
        {
            let x = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let mut max = F::neg_infinity();
                    for l in 0..len {
                        max = max.max(x[at(l)]);
                    }
                    let mut sum = F::zero();
                    for l in 0..len {
                        let e = (x[at(l)] - max).exp();
                        out[at(l)] = e;
                        sum += e;
                    }
                    for l in 0..len {
                        out[at(l)] /= sum;
                    }
                }
            }
        }
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g, y, _| {
            let mut grad = vec![F::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let mut dot = F::zero();
                    for l in 0..len {
                        dot += g[at(l)] * y[at(l)];
                    }
                    for l in 0..len {
                        grad[at(l)] = y[at(l)] * (g[at(l)] - dot);
                    }
                }
            }
            vec![Some(grad)]
        })
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&self) -> Tensor<F> {
        let n = self.dim(-1);
        let rows = self.numel() / n.max(1);
        let mut out = vec![F::zero(); self.numel()];
        {
            let x = self.data();
            for r in 0..rows {
                let row = &x[r * n..(r + 1) * n];
                let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
                for (o, &v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                    *o = v - lse;
                }
            }
        }
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g, y, _| {
            let mut grad = vec![F::zero(); y.len()];
            for r in 0..rows {
                let gs: F = g[r * n..(r + 1) * n].iter().copied().sum();
                for j in r * n..(r + 1) * n {
                    grad[j] = g[j] - y[j].exp() * gs;
                }
            }
            vec![Some(grad)]
        })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta` of that size.
    pub fn layer_norm(&self, gamma: &Tensor<F>, beta: &Tensor<F>, eps: F) -> Tensor<F> {
        let n = self.dim(-1);
        assert_eq!(gamma.shape(), [n], "layer_norm gamma shape");
        assert_eq!(beta.shape(), [n], "layer_norm beta shape");
        let rows = self.numel() / n.max(1);
        let nf = F::of(n as f64);
        let mut out = vec![F::zero(); self.numel()];
        let mut xhat = vec![F::zero(); self.numel()];
        let mut inv_std = vec![F::zero(); rows];
        {
            let x = self.data();
            let ga = gamma.data();
            let be = beta.data();
            for r in 0..rows {
                let row = &x[r * n..(r + 1) * n];
                let mean = row.iter().copied().sum::<F>() / nf;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
                let is = F::one() / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..n {
                    let h = (row[j] - mean) * is;
                    xhat[r * n + j] = h;
                    out[r * n + j] = h * ga[j] + be[j];
                }
            }
        }
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, _, parents| {
                let ga = parents[1].data();
                let mut gx = vec![F::zero(); rows * n];
                let mut ggamma = vec![F::zero(); n];
                let mut gbeta = vec![F::zero(); n];
                for r in 0..rows {
                    let mut mean_d = F::zero();
                    let mut mean_dx = F::zero();
                    for j in 0..n {
                        let i = r * n + j;
                        let d = g[i] * ga[j];
                        mean_d += d;
                        mean_dx += d * xhat[i];
                        ggamma[j] += g[i] * xhat[i];
                        gbeta[j] += g[i];
                    }
                    mean_d /= nf;
                    mean_dx /= nf;
                    for j in 0..n {
                        let i = r * n + j;
                        let d = g[i] * ga[j];
                        gx[i] = inv_std[r] * (d - mean_d - xhat[i] * mean_dx);
                    }
                }
                vec![Some(gx), Some(ggamma), Some(gbeta)]
            },
        )
    }

    /// Root-mean-square normalization over the last axis with scale `gamma`.
    pub fn rms_norm(&self, gamma: &Tensor<F>, eps: F) -> Tensor<F> {
        let n = self.dim(-1);
        assert_eq!(gamma.shape(), [n], "rms_norm gamma shape");
        let rows = self.numel() / n.max(1);
        let nf = F::of(n as f64);
        let mut out = vec![F::zero(); self.numel()];
        let mut xhat = vec![F::zero(); self.numel()];
        let mut inv_rms = vec![F::zero(); rows];
        {
            let x = self.data();
            let ga = gamma.data();
            for r in 0..rows {
                let row = &x[r * n..(r + 1) * n];
                let ms = row.iter().map(|&v| v * v).sum::<F>() / nf;
                let ir = F::one() / (ms + eps).sqrt();
                inv_rms[r] = ir;
                for j in 0..n {
                    let h = row[j] * ir;
                    xhat[r * n + j] = h;
                    out[r * n + j] = h * ga[j];
                }
            }
        }
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone()],
            move |g, _, parents| {
                let ga = parents[1].data();
                let mut gx = vec![F::zero(); rows * n];
                let mut ggamma = vec![F::zero(); n];
                for r in 0..rows {
                    let mut mean_dx = F::zero();
                    for j in 0..n {
                        let i = r * n + j;
                        mean_dx += g[i] * ga[j] * xhat[i];
                        ggamma[j] += g[i] * xhat[i];
                    }
                    mean_dx /= nf;
                    for j in 0..n {
                        let i = r * n + j;
                        gx[i] = inv_rms[r] * (g[i] * ga[j] - xhat[i] * mean_dx);
                    }
                }
                vec![Some(gx), Some(ggamma)]
            },
        )
    }
}
