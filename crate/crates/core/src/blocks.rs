//! Transformer building blocks shared by the slot models.

use slotrl_tensor::nn::{Activation, LayerNorm, Mlp, MultiHeadAttention, RmsNorm};
use slotrl_tensor::{Builder, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Layer,
    Rms,
}

#[derive(Clone, Debug)]
pub enum Norm<F: Scalar> {
    Layer(LayerNorm<F>),
    Rms(RmsNorm<F>),
}

impl<F: Scalar> Norm<F> {
    pub fn new(b: &mut Builder<'_, F>, kind: NormKind, dim: usize) -> Self {
        match kind {
            NormKind::Layer => Norm::Layer(LayerNorm::new(b, dim)),
            NormKind::Rms => Norm::Rms(RmsNorm::new(b, dim)),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        match self {
            Norm::Layer(n) => n.forward(x),
            Norm::Rms(n) => n.forward(x),
        }
    }
}

/// Pre-norm self-attention block followed by a pre-norm feed-forward block.
#[derive(Clone, Debug)]
pub struct TransformerBlock<F: Scalar> {
    pub attn_norm: Norm<F>,
    pub attn: MultiHeadAttention<F>,
    pub ffn_norm: Norm<F>,
    pub ffn: Mlp<F>,
}

impl<F: Scalar> TransformerBlock<F> {
    pub fn new(b: &mut Builder<'_, F>, dim: usize, heads: usize, hidden: usize, norm: NormKind) -> Self {
        Self {
            attn_norm: Norm::new(&mut b.sub("attn_norm"), norm, dim),
            attn: MultiHeadAttention::new(&mut b.sub("attn"), dim, heads),
            ffn_norm: Norm::new(&mut b.sub("ffn_norm"), norm, dim),
            ffn: Mlp::new(&mut b.sub("ffn"), dim, hidden, dim, Activation::Silu),
        }
    }

    /// `x: [B, L, D]`; returns the output and attention weights `[B, H, L, L]`.
    pub fn forward(&self, x: &Tensor<F>, bias: Option<&Tensor<F>>) -> (Tensor<F>, Tensor<F>) {
        let (a, w) = self.attn.forward(&self.attn_norm.forward(x), bias);
        let x = x.add(&a);
        let y = x.add(&self.ffn.forward(&self.ffn_norm.forward(&x)));
        (y, w)
    }
}

/// `[x, y, 1 - x, 1 - y]` for each cell of a `size x size` grid, shape `[size, size, 4]`.
pub fn grid_coordinates<F: Scalar>(size: usize) -> Tensor<F> {
    let denom = (size.max(2) - 1) as f64;
    let mut data = Vec::with_capacity(size * size * 4);
    for row in 0..size {
        for col in 0..size {
            let x = col as f64 / denom;
            let y = row as f64 / denom;
            data.extend([x, y, 1.0 - x, 1.0 - y].map(F::of));
        }
    }
    Tensor::from_vec(data, &[size, size, 4])
}
