//! Layers built from tensor operations. Each layer holds handles to leaves
//! registered in a [`ParamStore`](crate::ParamStore).

use crate::ops::conv::Padding;
use crate::store::{Builder, Init};
use crate::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
    Tanh,
}

impl Activation {
    pub fn apply<F: Scalar>(self, x: &Tensor<F>) -> Tensor<F> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Silu => x.silu(),
            Activation::Tanh => x.tanh(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Option<Tensor<F>>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(b: &mut Builder<'_, F>, input: usize, output: usize) -> Self {
        Self::with_bias(b, input, output, true)
    }

    pub fn with_bias(b: &mut Builder<'_, F>, input: usize, output: usize, bias: bool) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = b.param("weight", &[input, output], Init::Uniform(bound));
        let bias = bias.then(|| b.param("bias", &[output], Init::Zeros));
        Self { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// `x: [..., in] -> [..., out]`.
    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        let flat = if x.dims() == 2 {
            x.clone()
        } else {
            x.reshape(&[usize::MAX, self.in_dim()])
        };
        let mut y = flat.matmul(&self.weight);
        if let Some(b) = &self.bias {
            y = y.add(b);
        }
        if x.dims() == 2 {
            y
        } else {
            let mut shape = x.shape().to_vec();
            *shape.last_mut().unwrap() = self.out_dim();
            y.reshape(&shape)
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm<F: Scalar> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn new(b: &mut Builder<'_, F>, dim: usize) -> Self {
        Self {
            gamma: b.param("gamma", &[dim], Init::Ones),
            beta: b.param("beta", &[dim], Init::Zeros),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        x.layer_norm(&self.gamma, &self.beta, F::of(1e-5))
    }
}

#[derive(Clone, Debug)]
pub struct RmsNorm<F: Scalar> {
    pub gamma: Tensor<F>,
}

impl<F: Scalar> RmsNorm<F> {
    pub fn new(b: &mut Builder<'_, F>, dim: usize) -> Self {
        Self {
            gamma: b.param("gamma", &[dim], Init::Ones),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        x.rms_norm(&self.gamma, F::of(1e-6))
    }
}

/// Two-layer perceptron `in -> hidden -> out`.
#[derive(Clone, Debug)]
pub struct Mlp<F: Scalar> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
    pub activation: Activation,
}

impl<F: Scalar> Mlp<F> {
    pub fn new(
        b: &mut Builder<'_, F>,
        input: usize,
        hidden: usize,
        output: usize,
        activation: Activation,
    ) -> Self {
        Self {
            fc1: Linear::new(&mut b.sub("fc1"), input, hidden),
            fc2: Linear::new(&mut b.sub("fc2"), hidden, output),
            activation,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        self.fc2.forward(&self.activation.apply(&self.fc1.forward(x)))
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub stride: usize,
    pub pad: usize,
    pub padding: Padding,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        b: &mut Builder<'_, F>,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Self {
        let fan_in = (input * kernel * kernel) as f64;
        Self {
            weight: b.param(
                "weight",
                &[kernel, kernel, input, output],
                Init::Uniform((3.0 / fan_in).sqrt()),
            ),
            bias: b.param("bias", &[output], Init::Zeros),
            stride,
            pad: kernel / 2,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        x.conv2d(&self.weight, &self.bias, self.stride, self.pad, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

impl<F: Scalar> ConvTranspose2d<F> {
    /// Kernel 4, stride 2, padding 1: exactly doubles the spatial size.
    pub fn upsample2x(b: &mut Builder<'_, F>, input: usize, output: usize) -> Self {
        let fan_in = (input * 4) as f64;
        Self {
            weight: b.param("weight", &[input, 4, 4, output], Init::Uniform((3.0 / fan_in).sqrt())),
            bias: b.param("bias", &[output], Init::Zeros),
            stride: 2,
            pad: 1,
            output_pad: 0,
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        x.conv_transpose2d(&self.weight, &self.bias, self.stride, self.pad, self.output_pad)
    }
}

/// Gated recurrent unit cell with the reset gate applied after the hidden projection.
#[derive(Clone, Debug)]
pub struct GruCell<F: Scalar> {
    pub input: Linear<F>,
    pub hidden: Linear<F>,
    pub size: usize,
}

impl<F: Scalar> GruCell<F> {
    pub fn new(b: &mut Builder<'_, F>, input: usize, hidden: usize) -> Self {
        Self {
            input: Linear::new(&mut b.sub("input"), input, 3 * hidden),
            hidden: Linear::new(&mut b.sub("hidden"), hidden, 3 * hidden),
            size: hidden,
        }
    }

    /// `x: [..., in]`, `h: [..., hidden]` -> new hidden state.
    pub fn forward(&self, x: &Tensor<F>, h: &Tensor<F>) -> Tensor<F> {
        let gi = self.input.forward(x);
        let gh = self.hidden.forward(h);
        let s = self.size;
        let r = gi.narrow(-1, 0, s).add(&gh.narrow(-1, 0, s)).sigmoid();
        let z = gi.narrow(-1, s, s).add(&gh.narrow(-1, s, s)).sigmoid();
        let n = gi
            .narrow(-1, 2 * s, s)
            .add(&r.mul(&gh.narrow(-1, 2 * s, s)))
            .tanh();
        // h' = n + z (h - n)
        n.add(&z.mul(&h.sub(&n)))
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention<F: Scalar> {
    pub q: Linear<F>,
    pub k: Linear<F>,
    pub v: Linear<F>,
    pub out: Linear<F>,
    pub heads: usize,
}

impl<F: Scalar> MultiHeadAttention<F> {
    pub fn new(b: &mut Builder<'_, F>, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "dim {dim} not divisible by {heads} heads");
        Self {
            q: Linear::new(&mut b.sub("q"), dim, dim),
            k: Linear::new(&mut b.sub("k"), dim, dim),
            v: Linear::new(&mut b.sub("v"), dim, dim),
            out: Linear::new(&mut b.sub("out"), dim, dim),
            heads,
        }
    }

    /// Self-attention over `x: [B, L, D]`. `bias` is added to the scores and
    /// must broadcast to `[B, H, L, L]`; `-inf` entries mask keys out.
    /// Also returns the attention weights `[B, H, L, L]`.
    pub fn forward(&self, x: &Tensor<F>, bias: Option<&Tensor<F>>) -> (Tensor<F>, Tensor<F>) {
        let [b, l, d] = x.shape()[..] else {
            panic!("attention input must be [B, L, D], got {:?}", x.shape())
        };
        let h = self.heads;
        let dh = d / h;
        let split = |t: Tensor<F>| t.reshape(&[b, l, h, dh]).permute(&[0, 2, 1, 3]);
        let q = split(self.q.forward(x));
        let k = split(self.k.forward(x));
        let v = split(self.v.forward(x));
        let mut scores = q.matmul_t(&k).mul_scalar(F::one() / F::of(dh as f64).sqrt());
        if let Some(bias) = bias {
            scores = scores.add(bias);
        }
        let weights = scores.softmax(-1);
        let ctx = weights
            .matmul(&v)
            .permute(&[0, 2, 1, 3])
            .reshape(&[b, l, d]);
        (self.out.forward(&ctx), weights)
    }
}

/// Mean squared error over all elements.
pub fn mse<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    a.sub(b).square().mean_all()
}

/// `-sum(target * log_softmax(logits))` along the last axis, one value per row.
pub fn soft_cross_entropy<F: Scalar>(logits: &Tensor<F>, target: &Tensor<F>) -> Tensor<F> {
    logits.log_softmax().mul(target).sum_axis(-1, false).neg()
}
