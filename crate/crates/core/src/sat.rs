//! Causal transformer over slot histories with per-step register and output
//! tokens and linear recency biases.

use serde::{Deserialize, Serialize};
use slotrl_tensor::nn::{Linear, RmsNorm};
use slotrl_tensor::{Builder, Init, ParamStore, Scalar, Tensor};

use crate::blocks::{NormKind, TransformerBlock};
use crate::error::{argument, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SatConfig {
    pub slot_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub token_dim: usize,
    pub mlp_dim: usize,
    pub registers: usize,
}

impl Default for SatConfig {
    fn default() -> Self {
        Self {
            slot_dim: 128,
            layers: 4,
            heads: 8,
            token_dim: 256,
            mlp_dim: 512,
            registers: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Slot,
    Register,
    Output,
}

/// Token order within a step: `slots` slot tokens, `registers` register
/// tokens, then the output token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenLayout {
    pub steps: usize,
    pub slots: usize,
    pub registers: usize,
}

impl TokenLayout {
    pub fn per_step(&self) -> usize {
        self.slots + self.registers + 1
    }

    pub fn len(&self) -> usize {
        self.steps * self.per_step()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self, token: usize) -> usize {
        token / self.per_step()
    }

    pub fn kind(&self, token: usize) -> TokenKind {
        let i = token % self.per_step();
        if i < self.slots {
            TokenKind::Slot
        } else if i < self.slots + self.registers {
            TokenKind::Register
        } else {
            TokenKind::Output
        }
    }

    pub fn output_token(&self, step: usize) -> usize {
        step * self.per_step() + self.slots + self.registers
    }

    /// Tokens of earlier steps are visible only if they are slots.
    pub fn allowed(&self, query: usize, key: usize) -> bool {
        let (sq, sk) = (self.step(query), self.step(key));
        sk <= sq && (self.kind(key) == TokenKind::Slot || sk == sq)
    }
}

/// Geometric head slopes `2^(-8h/H)` for `h = 1..=H`.
pub fn alibi_slopes(heads: usize) -> Vec<f64> {
    (1..=heads)
        .map(|h| 2f64.powf(-8.0 * h as f64 / heads as f64))
        .collect()
}

/// Additive attention bias `[H, L, L]`: `-m_h * (step(q) - step(k))` where
/// attention is allowed and `-inf` elsewhere.
pub fn attention_bias<F: Scalar>(layout: &TokenLayout, heads: usize) -> Tensor<F> {
    let l = layout.len();
    let slopes = alibi_slopes(heads);
    let mut data = Vec::with_capacity(heads * l * l);
    for &m in &slopes {
        for q in 0..l {
            for k in 0..l {
                data.push(if layout.allowed(q, k) {
                    F::of(-m * (layout.step(q) - layout.step(k)) as f64)
                } else {
                    F::neg_infinity()
                });
            }
        }
    }
    Tensor::from_vec(data, &[heads, l, l])
}

#[derive(Clone, Debug)]
pub struct SatOutput<F: Scalar> {
    /// `[B, T, E]`
    pub outputs: Tensor<F>,
    pub layout: TokenLayout,
    /// per layer `[B, H, L, L]` when requested
    pub attention: Option<Vec<Tensor<F>>>,
}

#[derive(Clone, Debug)]
pub struct Sat<F: Scalar> {
    pub config: SatConfig,
    slot_in: Linear<F>,
    registers: Tensor<F>,
    output_token: Tensor<F>,
    layers: Vec<TransformerBlock<F>>,
    final_norm: RmsNorm<F>,
}

impl<F: Scalar> Sat<F> {
    pub fn new(b: &mut Builder<'_, F>, config: SatConfig) -> Result<Self> {
        if config.heads == 0 || !config.token_dim.is_multiple_of(config.heads) {
            return Err(argument("token_dim must be divisible by heads"));
        }
        let e = config.token_dim;
        let slot_in = Linear::new(&mut b.sub("slot_in"), config.slot_dim, e);
        let registers = b.param("registers", &[config.registers, e], Init::Normal(0.02));
        let output_token = b.param("output_token", &[1, e], Init::Normal(0.02));
        let layers = (0..config.layers)
            .map(|i| {
                TransformerBlock::new(
                    &mut b.sub(&format!("layer{i}")),
                    e,
                    config.heads,
                    config.mlp_dim,
                    NormKind::Rms,
                )
            })
            .collect();
        let final_norm = RmsNorm::new(&mut b.sub("final_norm"), e);
        Ok(Self {
            config,
            slot_in,
            registers,
            output_token,
            layers,
            final_norm,
        })
    }

    /// Standalone backbone with its own parameter store.
    pub fn standalone(config: SatConfig, rng: &mut dyn rand::RngCore) -> Result<(Self, ParamStore<F>)> {
        let mut store = ParamStore::new();
        let sat = Sat::new(&mut Builder::new(&mut store, rng), config)?;
        Ok((sat, store))
    }

    /// Processes `slots [B, T, N, Dz]` and returns one output embedding per step.
    pub fn forward(&self, slots: &Tensor<F>, record_attention: bool) -> Result<SatOutput<F>> {
        if slots.dims() != 4 || slots.dim(1) == 0 || slots.dim(2) == 0 || slots.dim(3) != self.config.slot_dim {
            return Err(argument(format!(
                "slot history must be [B, T, N, {}], got {:?}",
                self.config.slot_dim,
                slots.shape()
            )));
        }
        let [b, t, n, _] = slots.shape()[..] else { unreachable!() };
        let e = self.config.token_dim;
        let r = self.config.registers;
        let layout = TokenLayout {
            steps: t,
            slots: n,
            registers: r,
        };
        let mut parts = vec![self.slot_in.forward(slots)];
        if r > 0 {
            parts.push(self.registers.reshape(&[1, 1, r, e]).expand(&[b, t, r, e]));
        }
        parts.push(self.output_token.reshape(&[1, 1, 1, e]).expand(&[b, t, 1, e]));
        let mut x = Tensor::cat(&parts, 2).reshape(&[b, layout.len(), e]);
        let bias = attention_bias(&layout, self.config.heads);
        let mut records = record_attention.then(Vec::new);
        for layer in &self.layers {
            let (y, w) = layer.forward(&x, Some(&bias));
            if let Some(rec) = records.as_mut() {
                rec.push(w.detach());
            }
            x = y;
        }
        let x = self.final_norm.forward(&x).reshape(&[b, t, layout.per_step(), e]);
        let outputs = x.narrow(2, n + r, 1).reshape(&[b, t, e]);
        Ok(SatOutput {
            outputs,
            layout,
            attention: records,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slopes_are_geometric() {
        let s = alibi_slopes(8);
        assert_eq!(s[0], 0.5);
        assert_eq!(s[7], 2f64.powi(-8));
        for w in s.windows(2) {
            assert!((w[1] / w[0] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn output_token_visibility() {
        let layout = TokenLayout { steps: 5, slots: 2, registers: 1 };
        let out3 = layout.output_token(3);
        let visible: Vec<usize> = (0..layout.len()).filter(|&k| layout.allowed(out3, k)).collect();
        // slots of steps 0..=3 plus the register and output of step 3
        assert_eq!(visible, vec![0, 1, 4, 5, 8, 9, 12, 13, 14, 15]);
        let k0: Vec<usize> = (0..layout.len()).filter(|&k| layout.allowed(1, k)).collect();
        assert_eq!(k0, vec![0, 1, 2, 3]);
    }

    #[test]
    fn bias_values() {
        let layout = TokenLayout { steps: 4, slots: 1, registers: 0 };
        let bias = attention_bias::<f64>(&layout, 2).to_vec();
        let l = layout.len();
        let m = alibi_slopes(2);
        let at = |h: usize, q: usize, k: usize| bias[(h * l + q) * l + k];
        assert_eq!(at(0, 6, 7), 0.0);
        assert_eq!(at(1, 6, 0), -3.0 * m[1]);
        assert_eq!(at(0, 6, 1), f64::NEG_INFINITY);
        assert_eq!(at(0, 0, 2), f64::NEG_INFINITY);
    }
}
