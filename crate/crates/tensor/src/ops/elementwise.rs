//! Broadcasting binary arithmetic and pointwise functions.

use crate::tensor::numel;
use crate::{Scalar, Tensor};

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("shapes {a:?} and {b:?} cannot be broadcast"),
        };
    }
    out
}

/// Strides of `shape` when viewed as `out`, with zero stride on broadcast axes.
pub(crate) fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every element of `out` in row-major order together with the
/// matching flat offsets into two broadcast operands.
pub(crate) fn for_each_pair(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let total = numel(out);
    if total == 0 {
        return;
    }
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut counter = vec![0usize; rank - 1];
    let (mut base_a, mut base_b) = (0usize, 0usize);
    let mut o = 0;
    loop {
        let (mut pa, mut pb) = (base_a, base_b);
        for _ in 0..inner {
            f(o, pa, pb);
            o += 1;
            pa += ia;
            pb += ib;
        }
        // advance the odometer over the outer axes
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            counter[axis] += 1;
            base_a += sa[axis];
            base_b += sb[axis];
            if counter[axis] < out[axis] {
                break;
            }
            base_a -= sa[axis] * out[axis];
            base_b -= sb[axis] * out[axis];
            counter[axis] = 0;
        }
    }
}

/// Sums a gradient laid out as `out` back onto a broadcast operand of `shape`.
pub(crate) fn reduce_to_shape<F: Scalar>(grad: &[F], out: &[usize], shape: &[usize]) -> Vec<F> {
    if out == shape {
        return grad.to_vec();
    }
    let mut acc = vec![F::zero(); numel(shape)];
    let strides = broadcast_strides(shape, out);
    let zeros = vec![0; out.len()];
    for_each_pair(out, &strides, &zeros, |o, p, _| acc[p] += grad[o]);
    acc
}

/// Binary rule: value, then partial derivatives w.r.t. each operand given (a, b).
struct BinaryRule<F> {
    value: fn(F, F) -> F,
    da: fn(F, F) -> F,
    db: fn(F, F) -> F,
}

impl<F: Scalar> Tensor<F> {
    fn binary(&self, other: &Tensor<F>, rule: BinaryRule<F>) -> Tensor<F> {
        let sa = self.shape().to_vec();
        let sb = other.shape().to_vec();
        let out_shape = broadcast_shape(&sa, &sb);
        let a = self.data();
        let b = other.data();
        let value = rule.value;
        let data: Vec<F> = if sa == sb {
            a.iter().zip(b.iter()).map(|(&x, &y)| value(x, y)).collect()
        } else if sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == sb[..] {
            let nb = b.len();
            a.iter()
                .enumerate()
                .map(|(i, &x)| value(x, b[i % nb]))
                .collect()
        } else {
            let st_a = broadcast_strides(&sa, &out_shape);
            let st_b = broadcast_strides(&sb, &out_shape);
            let mut data = vec![F::zero(); numel(&out_shape)];
            for_each_pair(&out_shape, &st_a, &st_b, |o, pa, pb| data[o] = value(a[pa], b[pb]));
            data
        };
        drop(a);
        drop(b);
        let (da, db) = (rule.da, rule.db);
        let out_for_bw = out_shape.clone();
        Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            move |g, _, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                let sa = parents[0].shape();
                let sb = parents[1].shape();
                let st_a = broadcast_strides(sa, &out_for_bw);
                let st_b = broadcast_strides(sb, &out_for_bw);
                let mut ga = parents[0].requires_grad().then(|| vec![F::zero(); a.len()]);
                let mut gb = parents[1].requires_grad().then(|| vec![F::zero(); b.len()]);
                for_each_pair(&out_for_bw, &st_a, &st_b, |o, pa, pb| {
                    let (x, y) = (a[pa], b[pb]);
                    if let Some(ga) = ga.as_mut() {
                        ga[pa] += g[o] * da(x, y);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[pb] += g[o] * db(x, y);
                    }
                });
                vec![ga, gb]
            },
        )
    }

    pub fn add(&self, other: &Tensor<F>) -> Tensor<F> {
        if self.shape() == other.shape() {
            let data = self
                .data()
                .iter()
                .zip(other.data().iter())
                .map(|(&x, &y)| x + y)
                .collect();
            return Tensor::from_op(
                self.shape().to_vec(),
                data,
                vec![self.clone(), other.clone()],
                |g, _, parents| {
                    parents
                        .iter()
                        .map(|p| p.requires_grad().then(|| g.to_vec()))
                        .collect()
                },
            );
        }
        let out_shape = broadcast_shape(self.shape(), other.shape());
        // the gradient of addition is independent of the operands, so only
        // the reduction onto each operand's shape is needed
        let data = {
            let a = self.data();
            let b = other.data();
            let st_a = broadcast_strides(self.shape(), &out_shape);
            let st_b = broadcast_strides(other.shape(), &out_shape);
            let mut data = vec![F::zero(); numel(&out_shape)];
            for_each_pair(&out_shape, &st_a, &st_b, |o, pa, pb| data[o] = a[pa] + b[pb]);
            data
        };
        let out_for_bw = out_shape.clone();
        Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            move |g, _, parents| {
                parents
                    .iter()
                    .map(|p| {
                        p.requires_grad()
                            .then(|| reduce_to_shape(g, &out_for_bw, p.shape()))
                    })
                    .collect()
            },
        )
    }

    pub fn sub(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary(
            other,
            BinaryRule {
                value: |x, y| x - y,
                da: |_, _| F::one(),
                db: |_, _| -F::one(),
            },
        )
    }

    pub fn mul(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary(
            other,
            BinaryRule {
                value: |x, y| x * y,
                da: |_, y| y,
                db: |x, _| x,
            },
        )
    }

    pub fn div(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary(
            other,
            BinaryRule {
                value: |x, y| x / y,
                da: |_, y| F::one() / y,
                db: |x, y| -x / (y * y),
            },
        )
    }

    fn unary(
        &self,
        value: impl Fn(F) -> F,
        // derivative from (input, output)
        deriv: impl Fn(F, F) -> F + 'static,
    ) -> Tensor<F> {
        let data: Vec<F> = self.data().iter().map(|&x| value(x)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |g, out, parents| {
                let x = parents[0].data();
                let grad = g
                    .iter()
                    .zip(x.iter().zip(out))
                    .map(|(&g, (&x, &y))| g * deriv(x, y))
                    .collect();
                vec![Some(grad)]
            },
        )
    }

    pub fn add_scalar(&self, c: F) -> Tensor<F> {
        self.unary(move |x| x + c, |_, _| F::one())
    }

    pub fn mul_scalar(&self, c: F) -> Tensor<F> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn neg(&self) -> Tensor<F> {
        self.mul_scalar(-F::one())
    }

    pub fn exp(&self) -> Tensor<F> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<F> {
        self.unary(|x| x.ln(), |x, _| F::one() / x)
    }

    pub fn sqrt(&self) -> Tensor<F> {
        self.unary(|x| x.sqrt(), |_, y| F::of(0.5) / y)
    }

    pub fn square(&self) -> Tensor<F> {
        self.unary(|x| x * x, |x, _| F::of(2.0) * x)
    }

    pub fn tanh(&self) -> Tensor<F> {
        self.unary(|x| x.tanh(), |_, y| F::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<F> {
        self.unary(sigmoid, |_, y| y * (F::one() - y))
    }

    pub fn relu(&self) -> Tensor<F> {
        self.unary(
            |x| if x > F::zero() { x } else { F::zero() },
            |x, _| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self) -> Tensor<F> {
        self.unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (F::one() + x * (F::one() - s))
            },
        )
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&self) -> Tensor<F> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    /// `ln(1 - tanh(x)^2)`, evaluated stably for large `|x|`.
    pub fn log_one_minus_tanh_sq(&self) -> Tensor<F> {
        let ln4 = F::of(4.0f64.ln());
        // 1 - tanh^2 = 4 e^{-2|x|} / (1 + e^{-2|x|})^2
        self.unary(
            move |x| {
                let a = x.abs();
                ln4 - F::of(2.0) * a - F::of(2.0) * softplus(-F::of(2.0) * a)
            },
            |x, _| -F::of(2.0) * x.tanh(),
        )
    }
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<F: Scalar>(x: F) -> F {
    if x > F::of(30.0) {
        x
    } else if x < F::of(-30.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}
