//! Batched matrix products backed by `matrixmultiply`.

use crate::{Scalar, Tensor};

/// How a stored row-major matrix enters a product.
#[derive(Clone, Copy)]
pub(crate) enum Layout {
    /// stored as `rows x cols`
    Plain,
    /// stored as `cols x rows`, used transposed
    Trans,
}

/// `c (+)= op(a) op(b)` for `m x k` times `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_into<F: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    la: Layout,
    b: &[F],
    lb: Layout,
    c: &mut [F],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match la {
        Layout::Plain => (k as isize, 1),
        Layout::Trans => (1, m as isize),
    };
    let (rsb, csb) = match lb {
        Layout::Plain => (n as isize, 1),
        Layout::Trans => (1, k as isize),
    };
    let beta = if accumulate { F::one() } else { F::zero() };
    // SAFETY: the slices have exactly the sizes described by (m, k, n) and
    // the strides above, and `c` does not alias `a` or `b`.
    unsafe {
        F::gemm(
            m,
            k,
            n,
            F::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<F: Scalar> Tensor<F> {
    /// `[..., m, k] x [k, n]` (shared right operand) or
    /// `[..., m, k] x [..., k, n]` (equal batch dimensions).
    pub fn matmul(&self, other: &Tensor<F>) -> Tensor<F> {
        self.product(other, false)
    }

    /// `[..., m, k] x [..., n, k]^T`, i.e. `a b^T` without materializing the transpose.
    pub fn matmul_t(&self, other: &Tensor<F>) -> Tensor<F> {
        self.product(other, true)
    }

    fn product(&self, other: &Tensor<F>, trans_b: bool) -> Tensor<F> {
        let sa = self.shape().to_vec();
        let sb = other.shape().to_vec();
        assert!(sa.len() >= 2 && sb.len() >= 2, "matmul needs matrices, got {sa:?} and {sb:?}");
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        assert_eq!(k, kb, "inner dimensions differ: {sa:?} x {sb:?} (trans_b={trans_b})");
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let shared = sb.len() == 2;
        if !shared {
            assert_eq!(
                sa[..sa.len() - 2],
                sb[..sb.len() - 2],
                "batch dimensions differ: {sa:?} x {sb:?}"
            );
        }
        let lb = if trans_b { Layout::Trans } else { Layout::Plain };

        let mut out = vec![F::zero(); batch * m * n];
        {
            let a = self.data();
            let b = other.data();
            if shared {
                gemm_into(batch * m, k, n, &a, Layout::Plain, &b, lb, &mut out, false);
            } else {
                for i in 0..batch {
                    gemm_into(
                        m,
                        k,
                        n,
                        &a[i * m * k..(i + 1) * m * k],
                        Layout::Plain,
                        &b[i * k * n..(i + 1) * k * n],
                        lb,
                        &mut out[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
            }
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, n]);
        Tensor::from_op(
            shape,
            out,
            vec![self.clone(), other.clone()],
            move |g, _, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                let rows = if shared { batch * m } else { m };
                let reps = if shared { 1 } else { batch };
                let ga = parents[0].requires_grad().then(|| {
                    // dA = dC op(B)^T
                    let mut ga = vec![F::zero(); a.len()];
                    let lbt = if trans_b { Layout::Plain } else { Layout::Trans };
                    for i in 0..reps {
                        let bs = if shared { &b[..] } else { &b[i * k * n..(i + 1) * k * n] };
                        gemm_into(
                            rows,
                            n,
                            k,
                            &g[i * rows * n..(i + 1) * rows * n],
                            Layout::Plain,
                            bs,
                            lbt,
                            &mut ga[i * rows * k..(i + 1) * rows * k],
                            false,
                        );
                    }
                    ga
                });
                let gb = parents[1].requires_grad().then(|| {
                    let mut gb = vec![F::zero(); b.len()];
                    for i in 0..reps {
                        let a_i = &a[i * rows * k..(i + 1) * rows * k];
                        let g_i = &g[i * rows * n..(i + 1) * rows * n];
                        let gb_i = if shared {
                            &mut gb[..]
                        } else {
                            &mut gb[i * k * n..(i + 1) * k * n]
                        };
                        if trans_b {
                            // B stored n x k: dB = dC^T A
                            gemm_into(n, rows, k, g_i, Layout::Trans, a_i, Layout::Plain, gb_i, false);
                        } else {
                            // dB = A^T dC
                            gemm_into(k, rows, n, a_i, Layout::Trans, g_i, Layout::Plain, gb_i, false);
                        }
                    }
                    gb
                });
                vec![ga, gb]
            },
        )
    }
}
