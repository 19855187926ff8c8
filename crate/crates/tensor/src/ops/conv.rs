//! 2D convolutions on channels-last (`[batch, height, width, channels]`) tensors.

use crate::ops::linalg::{gemm_into, Layout};
use crate::{Scalar, Tensor};

/// How a convolution reads outside the input image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zeros,
    /// Repeats the border pixel; a constant image stays constant.
    Replicate,
}

/// Geometry shared by the patch gather and its adjoint.
#[derive(Clone, Copy, Debug)]
struct PatchGeometry {
    batch: usize,
    /// high-resolution side (conv input / transposed-conv output)
    hi_h: usize,
    hi_w: usize,
    channels: usize,
    /// low-resolution side (conv output / transposed-conv input)
    lo_h: usize,
    lo_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    padding: Padding,
}

impl PatchGeometry {
    fn row_len(&self) -> usize {
        self.kh * self.kw * self.channels
    }

    fn rows(&self) -> usize {
        self.batch * self.lo_h * self.lo_w
    }

    /// Source coordinate for low-res `lo` and kernel tap `k`, or `None` when it
    /// falls in zero padding.
    #[inline]
    fn source(&self, lo: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (lo * self.stride + k) as isize - self.pad as isize;
        if pos >= 0 && (pos as usize) < extent {
            Some(pos as usize)
        } else {
            match self.padding {
                Padding::Zeros => None,
                Padding::Replicate => Some(pos.clamp(0, extent as isize - 1) as usize),
            }
        }
    }

    /// Visits `(row offset in cols, offset in hi-res tensor)` for each
    /// contiguous channel run.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize)) {
        let c = self.channels;
        for b in 0..self.batch {
            for ly in 0..self.lo_h {
                for lx in 0..self.lo_w {
                    let row = ((b * self.lo_h + ly) * self.lo_w + lx) * self.row_len();
                    for ky in 0..self.kh {
                        let Some(hy) = self.source(ly, ky, self.hi_h) else { continue };
                        for kx in 0..self.kw {
                            let Some(hx) = self.source(lx, kx, self.hi_w) else { continue };
                            let col = row + (ky * self.kw + kx) * c;
                            let src = ((b * self.hi_h + hy) * self.hi_w + hx) * c;
                            f(col, src);
                        }
                    }
                }
            }
        }
    }

    fn gather<F: Scalar>(&self, hi: &[F]) -> Vec<F> {
        let c = self.channels;
        let mut cols = vec![F::zero(); self.rows() * self.row_len()];
        self.for_each_run(|col, src| cols[col..col + c].copy_from_slice(&hi[src..src + c]));
        cols
    }

    fn scatter<F: Scalar>(&self, cols: &[F]) -> Vec<F> {
        let c = self.channels;
        let mut hi = vec![F::zero(); self.batch * self.hi_h * self.hi_w * c];
        self.for_each_run(|col, src| {
            hi[src..src + c]
                .iter_mut()
                .zip(&cols[col..col + c])
                .for_each(|(h, &v)| *h += v)
        });
        hi
    }
}

fn add_bias<F: Scalar>(out: &mut [F], bias: &[F]) {
    let n = bias.len();
    for row in out.chunks_mut(n) {
        row.iter_mut().zip(bias).for_each(|(o, &b)| *o += b);
    }
}

fn bias_grad<F: Scalar>(g: &[F], n: usize) -> Vec<F> {
    let mut gb = vec![F::zero(); n];
    for row in g.chunks(n) {
        gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
    }
    gb
}

impl<F: Scalar> Tensor<F> {
    /// Convolution of `[B, H, W, Cin]` with `weight: [kh, kw, Cin, Cout]` and
    /// `bias: [Cout]`, output `[B, Ho, Wo, Cout]`.
    pub fn conv2d(
        &self,
        weight: &Tensor<F>,
        bias: &Tensor<F>,
        stride: usize,
        pad: usize,
        padding: Padding,
    ) -> Tensor<F> {
        let [batch, h, w, cin] = self.shape()[..] else {
            panic!("conv2d input must be [B, H, W, C], got {:?}", self.shape())
        };
        let [kh, kw, wc, cout] = weight.shape()[..] else {
            panic!("conv2d weight must be [kh, kw, Cin, Cout], got {:?}", weight.shape())
        };
        assert_eq!(wc, cin, "conv2d channel mismatch");
        assert_eq!(bias.shape(), [cout], "conv2d bias shape");
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let geo = PatchGeometry {
            batch,
            hi_h: h,
            hi_w: w,
            channels: cin,
            lo_h: ho,
            lo_w: wo,
            kh,
            kw,
            stride,
            pad,
            padding,
        };
        let rows = geo.rows();
        let kk = geo.row_len();
        let mut out = vec![F::zero(); rows * cout];
        {
            let cols = geo.gather(&self.data());
            let wd = weight.data();
            gemm_into(rows, kk, cout, &cols, Layout::Plain, &wd, Layout::Plain, &mut out, false);
            add_bias(&mut out, &bias.data());
        }
        Tensor::from_op(
            vec![batch, ho, wo, cout],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            move |g, _, parents| {
                let gx = parents[0].requires_grad().then(|| {
                    let wd = parents[1].data();
                    let mut dcols = vec![F::zero(); rows * kk];
                    gemm_into(rows, cout, kk, g, Layout::Plain, &wd, Layout::Trans, &mut dcols, false);
                    geo.scatter(&dcols)
                });
                let gw = parents[1].requires_grad().then(|| {
                    let cols = geo.gather(&parents[0].data());
                    let mut gw = vec![F::zero(); kk * cout];
                    gemm_into(kk, rows, cout, &cols, Layout::Trans, g, Layout::Plain, &mut gw, false);
                    gw
                });
                let gb = parents[2].requires_grad().then(|| bias_grad(g, cout));
                vec![gx, gw, gb]
            },
        )
    }

    /// Transposed convolution of `[B, H, W, Cin]` with `weight: [Cin, kh, kw, Cout]`,
    /// output side `(H - 1) * stride - 2 * pad + kh + output_pad`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<F>,
        bias: &Tensor<F>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Tensor<F> {
        let [batch, h, w, cin] = self.shape()[..] else {
            panic!("conv_transpose2d input must be [B, H, W, C], got {:?}", self.shape())
        };
        let [wc, kh, kw, cout] = weight.shape()[..] else {
            panic!("conv_transpose2d weight must be [Cin, kh, kw, Cout], got {:?}", weight.shape())
        };
        assert_eq!(wc, cin, "conv_transpose2d channel mismatch");
        assert_eq!(bias.shape(), [cout], "conv_transpose2d bias shape");
        let ho = (h - 1) * stride + kh + output_pad - 2 * pad;
        let wo = (w - 1) * stride + kw + output_pad - 2 * pad;
        let geo = PatchGeometry {
            batch,
            hi_h: ho,
            hi_w: wo,
            channels: cout,
            lo_h: h,
            lo_w: w,
            kh,
            kw,
            stride,
            pad,
            padding: Padding::Zeros,
        };
        let rows = geo.rows();
        let kk = geo.row_len();
        let out = {
            let mut cols = vec![F::zero(); rows * kk];
            gemm_into(rows, cin, kk, &self.data(), Layout::Plain, &weight.data(), Layout::Plain, &mut cols, false);
            let mut out = geo.scatter(&cols);
            add_bias(&mut out, &bias.data());
            out
        };
        Tensor::from_op(
            vec![batch, ho, wo, cout],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            move |g, _, parents| {
                let dcols = geo.gather(g);
                let gx = parents[0].requires_grad().then(|| {
                    let mut gx = vec![F::zero(); rows * cin];
                    gemm_into(rows, kk, cin, &dcols, Layout::Plain, &parents[1].data(), Layout::Trans, &mut gx, false);
                    gx
                });
                let gw = parents[1].requires_grad().then(|| {
                    let mut gw = vec![F::zero(); cin * kk];
                    gemm_into(cin, rows, kk, &parents[0].data(), Layout::Trans, &dcols, Layout::Plain, &mut gw, false);
                    gw
                });
                let gb = parents[2].requires_grad().then(|| bias_grad(g, cout));
                vec![gx, gw, gb]
            },
        )
    }
}
