//! Reductions and layout operations.

use crate::ops::elementwise::{broadcast_strides, for_each_pair, reduce_to_shape};
use crate::tensor::numel;
use crate::{Scalar, Tensor};

/// `(outer, len, inner)` split of a shape around `axis`.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = acc;
        acc *= shape[i];
    }
    strides
}

impl<F: Scalar> Tensor<F> {
    pub fn sum_all(&self) -> Tensor<F> {
        let s = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(vec![], vec![s], vec![self.clone()], move |g, _, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Tensor<F> {
        let n = self.numel();
        self.sum_all().mul_scalar(F::one() / F::of(n as f64))
    }

    /// Sum over `axis`, optionally keeping it with size one.
    pub fn sum_axis(&self, axis: isize, keepdim: bool) -> Tensor<F> {
        let ax = self.axis(axis);
        let (outer, len, inner) = split_at_axis(self.shape(), ax);
        let mut out = vec![F::zero(); outer * inner];
        {
            let x = self.data();
            for o in 0..outer {
                for l in 0..len {
                    let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                    let dst = &mut out[o * inner..(o + 1) * inner];
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                }
            }
        }
        let mut shape = self.shape().to_vec();
        if keepdim {
            shape[ax] = 1;
        } else {
            shape.remove(ax);
        }
        Tensor::from_op(shape, out, vec![self.clone()], move |g, _, _| {
            let mut grad = vec![F::zero(); outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    grad[(o * len + l) * inner..(o * len + l + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(grad)]
        })
    }

    pub fn mean_axis(&self, axis: isize, keepdim: bool) -> Tensor<F> {
        let n = self.dim(axis);
        self.sum_axis(axis, keepdim).mul_scalar(F::one() / F::of(n as f64))
    }

    /// Same data, new shape. One dimension may be given as `usize::MAX` to be inferred.
    pub fn reshape(&self, shape: &[usize]) -> Tensor<F> {
        let mut shape = shape.to_vec();
        if let Some(pos) = shape.iter().position(|&d| d == usize::MAX) {
            let known: usize = shape.iter().filter(|&&d| d != usize::MAX).product();
            shape[pos] = self.numel() / known.max(1);
        }
        assert_eq!(
            numel(&shape),
            self.numel(),
            "cannot reshape {:?} into {:?}",
            self.shape(),
            shape
        );
        Tensor::from_op(shape, self.to_vec(), vec![self.clone()], |g, _, _| {
            vec![Some(g.to_vec())]
        })
    }

    /// Inserts a size-one axis at `axis`.
    pub fn unsqueeze(&self, axis: usize) -> Tensor<F> {
        let mut shape = self.shape().to_vec();
        shape.insert(axis, 1);
        self.reshape(&shape)
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Tensor<F> {
        let rank = self.dims();
        assert_eq!(perm.len(), rank, "permutation rank mismatch");
        let in_shape = self.shape().to_vec();
        let in_strides = row_major_strides(&in_shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let zeros = vec![0; rank];
        let mut out = vec![F::zero(); self.numel()];
        {
            let x = self.data();
            for_each_pair(&out_shape, &gather, &zeros, |o, src, _| out[o] = x[src]);
        }
        let shape_bw = out_shape.clone();
        Tensor::from_op(out_shape, out, vec![self.clone()], move |g, _, _| {
            let mut grad = vec![F::zero(); g.len()];
            for_each_pair(&shape_bw, &gather, &zeros, |o, src, _| grad[src] = g[o]);
            vec![Some(grad)]
        })
    }

    /// Swaps two axes.
    pub fn transpose(&self, a: isize, b: isize) -> Tensor<F> {
        let (a, b) = (self.axis(a), self.axis(b));
        let mut perm: Vec<usize> = (0..self.dims()).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: isize, start: usize, len: usize) -> Tensor<F> {
        let ax = self.axis(axis);
        let (outer, full, inner) = split_at_axis(self.shape(), ax);
        assert!(start + len <= full, "narrow out of range");
        let mut out = Vec::with_capacity(outer * len * inner);
        {
            let x = self.data();
            for o in 0..outer {
                let base = (o * full + start) * inner;
                out.extend_from_slice(&x[base..base + len * inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[ax] = len;
        Tensor::from_op(shape, out, vec![self.clone()], move |g, _, _| {
            let mut grad = vec![F::zero(); outer * full * inner];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                grad[base..base + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(grad)]
        })
    }

    /// Index `i` along `axis`, removing that axis.
    pub fn select(&self, axis: isize, index: usize) -> Tensor<F> {
        let ax = self.axis(axis);
        let mut shape = self.shape().to_vec();
        shape.remove(ax);
        self.narrow(ax as isize, index, 1).reshape(&shape)
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn cat(tensors: &[Tensor<F>], axis: isize) -> Tensor<F> {
        assert!(!tensors.is_empty(), "cat of zero tensors");
        let ax = tensors[0].axis(axis);
        let base = tensors[0].shape().to_vec();
        for t in tensors {
            assert_eq!(t.dims(), base.len(), "cat rank mismatch");
            for (i, (&x, &y)) in t.shape().iter().zip(&base).enumerate() {
                assert!(i == ax || x == y, "cat shape mismatch {:?} vs {:?}", t.shape(), base);
            }
        }
        let (outer, _, inner) = split_at_axis(&base, ax);
        let lens: Vec<usize> = tensors.iter().map(|t| t.shape()[ax]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        {
            let datas: Vec<_> = tensors.iter().map(|t| t.data()).collect();
            for o in 0..outer {
                for (d, &l) in datas.iter().zip(&lens) {
                    out.extend_from_slice(&d[o * l * inner..(o + 1) * l * inner]);
                }
            }
        }
        let mut shape = base;
        shape[ax] = total;
        Tensor::from_op(shape, out, tensors.to_vec(), move |g, _, parents| {
            let mut grads: Vec<Option<Vec<F>>> = parents
                .iter()
                .zip(&lens)
                .map(|(p, &l)| p.requires_grad().then(|| Vec::with_capacity(outer * l * inner)))
                .collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (gi, &l) in grads.iter_mut().zip(&lens) {
                    if let Some(gi) = gi {
                        gi.extend_from_slice(&g[offset..offset + l * inner]);
                    }
                    offset += l * inner;
                }
            }
            grads
        })
    }

    /// Stacks equally shaped tensors along a new axis.
    pub fn stack(tensors: &[Tensor<F>], axis: usize) -> Tensor<F> {
        let parts: Vec<Tensor<F>> = tensors.iter().map(|t| t.unsqueeze(axis)).collect();
        Tensor::cat(&parts, axis as isize)
    }

    /// Broadcasts to a larger shape (numpy rules).
    pub fn expand(&self, shape: &[usize]) -> Tensor<F> {
        let out_shape = shape.to_vec();
        let strides = broadcast_strides(self.shape(), &out_shape);
        for (i, &d) in self.shape().iter().rev().enumerate() {
            let od = out_shape[out_shape.len() - 1 - i];
            assert!(d == od || d == 1, "cannot expand {:?} to {:?}", self.shape(), shape);
        }
        let zeros = vec![0; out_shape.len()];
        let mut out = vec![F::zero(); numel(&out_shape)];
        {
            let x = self.data();
            for_each_pair(&out_shape, &strides, &zeros, |o, p, _| out[o] = x[p]);
        }
        let shape_bw = out_shape.clone();
        Tensor::from_op(out_shape, out, vec![self.clone()], move |g, _, parents| {
            vec![Some(reduce_to_shape(g, &shape_bw, parents[0].shape()))]
        })
    }

    /// Gathers entries `indices` along axis 0.
    pub fn index_select(&self, indices: &[usize]) -> Tensor<F> {
        let rows = self.shape()[0];
        let row = self.numel() / rows.max(1);
        let mut out = Vec::with_capacity(indices.len() * row);
        {
            let x = self.data();
            for &i in indices {
                assert!(i < rows, "index {i} out of range for {rows} rows");
                out.extend_from_slice(&x[i * row..(i + 1) * row]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        let indices = indices.to_vec();
        Tensor::from_op(shape, out, vec![self.clone()], move |g, _, _| {
            let mut grad = vec![F::zero(); rows * row];
            for (k, &i) in indices.iter().enumerate() {
                grad[i * row..(i + 1) * row]
                    .iter_mut()
                    .zip(&g[k * row..(k + 1) * row])
                    .for_each(|(a, &b)| *a += b);
            }
            vec![Some(grad)]
        })
    }
}
