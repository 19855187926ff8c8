//! Action-conditional autoregressive slot dynamics.
//!
//! Each step contributes its slots and one action token. Layers alternate
//! causal temporal attention (one sequence per token index) with relational
//! attention across the tokens of a step. The prediction for the next step is
//! a residual update of the current slots.

use serde::{Deserialize, Serialize};
use slotrl_tensor::nn::{Activation, LayerNorm, Linear, Mlp, MultiHeadAttention};
use slotrl_tensor::{Builder, Init, ParamStore, Scalar, Tensor};

use crate::error::{argument, Result};
use crate::savi::Savi;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub slot_dim: usize,
    pub action_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub token_dim: usize,
    pub mlp_dim: usize,
    /// longest history attended; older steps are dropped
    pub max_history: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            slot_dim: 128,
            action_dim: crate::env::ACTION_DIM,
            layers: 4,
            heads: 8,
            token_dim: 256,
            mlp_dim: 512,
            max_history: 64,
        }
    }
}

#[derive(Clone, Debug)]
struct Layer<F: Scalar> {
    temporal_norm: LayerNorm<F>,
    temporal: MultiHeadAttention<F>,
    relational_norm: LayerNorm<F>,
    relational: MultiHeadAttention<F>,
    ffn_norm: LayerNorm<F>,
    ffn: Mlp<F>,
}

impl<F: Scalar> Layer<F> {
    fn new(b: &mut Builder<'_, F>, c: &DynamicsConfig) -> Self {
        let e = c.token_dim;
        Self {
            temporal_norm: LayerNorm::new(&mut b.sub("temporal_norm"), e),
            temporal: MultiHeadAttention::new(&mut b.sub("temporal"), e, c.heads),
            relational_norm: LayerNorm::new(&mut b.sub("relational_norm"), e),
            relational: MultiHeadAttention::new(&mut b.sub("relational"), e, c.heads),
            ffn_norm: LayerNorm::new(&mut b.sub("ffn_norm"), e),
            ffn: Mlp::new(&mut b.sub("ffn"), e, c.mlp_dim, e, Activation::Silu),
        }
    }

    /// `x: [B, T, K, E]`, `causal: [T, T]`.
    fn forward(&self, x: &Tensor<F>, causal: &Tensor<F>) -> Tensor<F> {
        let [b, t, k, e] = x.shape()[..] else { unreachable!() };
        let seq = self
            .temporal_norm
            .forward(x)
            .permute(&[0, 2, 1, 3])
            .reshape(&[b * k, t, e]);
        let (a, _) = self.temporal.forward(&seq, Some(causal));
        let x = x.add(&a.reshape(&[b, k, t, e]).permute(&[0, 2, 1, 3]));
        let set = self.relational_norm.forward(&x).reshape(&[b * t, k, e]);
        let (r, _) = self.relational.forward(&set, None);
        let x = x.add(&r.reshape(&[b, t, k, e]));
        x.add(&self.ffn.forward(&self.ffn_norm.forward(&x)))
    }
}

pub fn causal_bias<F: Scalar>(t: usize) -> Tensor<F> {
    let data = (0..t * t)
        .map(|i| if i % t <= i / t { F::zero() } else { F::neg_infinity() })
        .collect();
    Tensor::from_vec(data, &[t, t])
}

#[derive(Clone, Debug)]
pub struct Dynamics<F: Scalar> {
    pub config: DynamicsConfig,
    pub params: ParamStore<F>,
    slot_in: Linear<F>,
    action_in: Linear<F>,
    time_embedding: Tensor<F>,
    layers: Vec<Layer<F>>,
    out_norm: LayerNorm<F>,
    out: Linear<F>,
}

impl<F: Scalar> Dynamics<F> {
    pub fn new(config: DynamicsConfig, rng: &mut dyn rand::RngCore) -> Result<Self> {
        if config.heads == 0 || !config.token_dim.is_multiple_of(config.heads) {
            return Err(argument("token_dim must be divisible by heads"));
        }
        if config.max_history == 0 {
            return Err(argument("max_history must be positive"));
        }
        let mut params = ParamStore::new();
        let mut b = Builder::new(&mut params, rng);
        let c = &config;
        let slot_in = Linear::new(&mut b.sub("slot_in"), c.slot_dim, c.token_dim);
        let action_in = Linear::new(&mut b.sub("action_in"), c.action_dim, c.token_dim);
        let time_embedding = b.param("time_embedding", &[c.max_history, c.token_dim], Init::Normal(0.02));
        let layers = (0..c.layers)
            .map(|i| Layer::new(&mut b.sub(&format!("layer{i}")), c))
            .collect();
        let out_norm = LayerNorm::new(&mut b.sub("out_norm"), c.token_dim);
        let out = Linear::new(&mut b.sub("out"), c.token_dim, c.slot_dim);
        Ok(Self {
            config,
            params,
            slot_in,
            action_in,
            time_embedding,
            layers,
            out_norm,
            out,
        })
    }

    fn check(&self, slots: &Tensor<F>, actions: &Tensor<F>) -> Result<()> {
        if slots.dims() != 4 || slots.dim(1) == 0 || slots.dim(3) != self.config.slot_dim {
            return Err(argument(format!("slot history must be [B, T, N, {}], got {:?}", self.config.slot_dim, slots.shape())));
        }
        if actions.dims() != 3
            || actions.shape()[..2] != slots.shape()[..2]
            || actions.dim(2) != self.config.action_dim
        {
            return Err(argument(format!(
                "actions {:?} do not align with slots {:?}",
                actions.shape(),
                slots.shape()
            )));
        }
        Ok(())
    }

    /// Next-step predictions for every step of `slots [B, T, N, Dz]` given
    /// `actions [B, T, A]`. Output `[B, T', N, Dz]` where `T'` is `T` capped
    /// at the history limit; the prediction at step `t` uses steps `<= t` only.
    pub fn predict_sequence(&self, slots: &Tensor<F>, actions: &Tensor<F>) -> Result<Tensor<F>> {
        self.check(slots, actions)?;
        let t_all = slots.dim(1);
        let t = t_all.min(self.config.max_history);
        let (slots, actions) = if t < t_all {
            (slots.narrow(1, t_all - t, t), actions.narrow(1, t_all - t, t))
        } else {
            (slots.clone(), actions.clone())
        };
        let [b, _, n, dz] = slots.shape()[..] else { unreachable!() };
        let e = self.config.token_dim;
        let slot_tokens = self.slot_in.forward(&slots);
        let action_tokens = self.action_in.forward(&actions).unsqueeze(2);
        let time = self.time_embedding.narrow(0, 0, t).reshape(&[t, 1, e]);
        let mut x = Tensor::cat(&[slot_tokens, action_tokens], 2).add(&time);
        let causal = causal_bias(t);
        for layer in &self.layers {
            x = layer.forward(&x, &causal);
        }
        let delta = self
            .out
            .forward(&self.out_norm.forward(&x.narrow(2, 0, n)))
            .reshape(&[b, t, n, dz]);
        Ok(slots.add(&delta))
    }

    /// Prediction of the slots following the last step of the history, `[B, N, Dz]`.
    pub fn predict_next(&self, slots: &Tensor<F>, actions: &Tensor<F>) -> Result<Tensor<F>> {
        let seq = self.predict_sequence(slots, actions)?;
        Ok(seq.select(1, seq.dim(1) - 1))
    }

    /// Autoregressive open-loop prediction of `horizon` steps from `seed [B, S, N, Dz]`
    /// with `actions [B, S + horizon, A]`. Returns `[B, horizon, N, Dz]`.
    pub fn rollout(&self, seed: &Tensor<F>, actions: &Tensor<F>, horizon: usize) -> Result<Tensor<F>> {
        if seed.dims() != 4 || seed.dim(1) == 0 || horizon == 0 {
            return Err(argument("rollout needs at least one seed step and one predicted step"));
        }
        let s = seed.dim(1);
        if actions.dims() != 3 || actions.dim(1) != s + horizon || actions.dim(0) != seed.dim(0) {
            return Err(argument(format!(
                "expected actions [{}, {}, A], got {:?}",
                seed.dim(0),
                s + horizon,
                actions.shape()
            )));
        }
        let mut history = seed.clone();
        let mut preds = Vec::with_capacity(horizon);
        for step in 0..horizon {
            let len = s + step;
            let next = self.predict_next(&history, &actions.narrow(1, 0, len))?;
            history = Tensor::cat(&[history, next.unsqueeze(1)], 1);
            preds.push(next);
        }
        Ok(Tensor::stack(&preds, 1))
    }
}

#[derive(Clone, Debug)]
pub struct DynamicsLoss<F: Scalar> {
    pub total: Tensor<F>,
    pub joint_embedding: Tensor<F>,
    pub reconstruction: Option<Tensor<F>>,
}

/// Slot-space error against the (gradient-stopped) encoder targets plus the
/// weighted pixel error of the decoded predictions. All tensors are
/// `[B, T, ...]`: `predicted`/`targets` `[B, T, N, Dz]`, `frames` `[B, T, H, W, 3]`.
pub fn dynamics_loss<F: Scalar>(
    predicted: &Tensor<F>,
    targets: &Tensor<F>,
    frames: &Tensor<F>,
    decoder: &Savi<F>,
    reconstruction_weight: f64,
) -> Result<DynamicsLoss<F>> {
    if predicted.shape() != targets.shape() || predicted.shape()[..2] != frames.shape()[..2] {
        return Err(argument(format!(
            "predictions {:?}, targets {:?} and frames {:?} do not align",
            predicted.shape(),
            targets.shape(),
            frames.shape()
        )));
    }
    let joint = slotrl_tensor::nn::mse(predicted, &targets.detach());
    if reconstruction_weight == 0.0 {
        return Ok(DynamicsLoss {
            total: joint.clone(),
            joint_embedding: joint,
            reconstruction: None,
        });
    }
    let [b, t, n, dz] = predicted.shape()[..] else { unreachable!() };
    let decoded = decoder.decode(&predicted.reshape(&[b * t, n, dz]))?;
    let s = decoder.config.image_size;
    let recon = slotrl_tensor::nn::mse(&decoded.composite, &frames.reshape(&[b * t, s, s, 3]).detach());
    Ok(DynamicsLoss {
        total: joint.add(&recon.mul_scalar(F::of(reconstruction_weight))),
        joint_embedding: joint,
        reconstruction: Some(recon),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Dynamics<f64> {
        let cfg = DynamicsConfig {
            slot_dim: 6,
            action_dim: 2,
            layers: 2,
            heads: 2,
            token_dim: 8,
            mlp_dim: 16,
            max_history: 8,
        };
        Dynamics::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn shapes_and_errors() {
        let m = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = Tensor::randn(&[2, 3, 4, 6], &mut rng);
        let a = Tensor::randn(&[2, 3, 2], &mut rng);
        assert_eq!(m.predict_next(&z, &a).unwrap().shape(), [2, 4, 6]);
        assert!(m.predict_next(&z, &a.narrow(1, 0, 2)).is_err());
        assert!(m.predict_next(&Tensor::zeros(&[2, 0, 4, 6]), &Tensor::zeros(&[2, 0, 2])).is_err());
        let seed = z.narrow(1, 0, 1);
        assert!(m.rollout(&seed, &Tensor::randn(&[2, 3, 2], &mut rng), 3).is_err());
        assert_eq!(m.rollout(&seed, &Tensor::randn(&[2, 4, 2], &mut rng), 3).unwrap().shape(), [2, 3, 4, 6]);
    }

    #[test]
    fn long_histories_are_truncated() {
        let m = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Tensor::randn(&[1, 12, 2, 6], &mut rng);
        let a = Tensor::randn(&[1, 12, 2], &mut rng);
        let full = m.predict_next(&z, &a).unwrap().to_vec();
        let tail = m.predict_next(&z.narrow(1, 4, 8), &a.narrow(1, 4, 8)).unwrap().to_vec();
        assert_eq!(full, tail);
    }

    #[test]
    fn last_action_matters() {
        let m = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = Tensor::randn(&[1, 3, 2, 6], &mut rng);
        let a = Tensor::randn(&[1, 3, 2], &mut rng);
        let base = m.predict_next(&z, &a).unwrap().to_vec();
        let mut changed = a.to_vec();
        changed[5] += 1.0;
        let moved = m.predict_next(&z, &Tensor::from_vec(changed, &[1, 3, 2])).unwrap().to_vec();
        assert_ne!(base, moved);
    }

    #[test]
    fn joint_embedding_gradient_is_twice_the_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pred = Tensor::<f64>::randn(&[1, 2, 2, 3], &mut rng);
        pred.set_requires_grad(true);
        let target = Tensor::randn(&[1, 2, 2, 3], &mut rng);
        let frames = Tensor::zeros(&[1, 2, 32, 32, 3]);
        let savi = crate::savi::Savi::new(
            crate::savi::SaviConfig {
                image_size: 32,
                num_slots: 2,
                slot_dim: 3,
                attention_dim: 4,
                encoder_channels: 4,
                encoder_kernel: 3,
                decoder_channels: 4,
                mlp_hidden: 4,
                predictor_heads: 1,
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
        let loss = dynamics_loss(&pred, &target, &frames, &savi, 0.0).unwrap();
        assert!(loss.reconstruction.is_none());
        let g = loss.total.backward();
        let n = pred.numel() as f64;
        for ((gp, p), t) in g.get(&pred).unwrap().iter().zip(pred.to_vec()).zip(target.to_vec()) {
            assert!((gp - 2.0 * (p - t) / n).abs() < 1e-12);
        }
        let same = dynamics_loss(&target, &target, &frames, &savi, 0.0).unwrap();
        assert_eq!(same.total.item(), 0.0);
    }
}
