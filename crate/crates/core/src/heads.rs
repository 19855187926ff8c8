//! Reward, critic and actor models over slot histories, and the returns and
//! losses that train them. Each model owns a slot aggregation backbone
//! followed by an MLP head.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use slotrl_tensor::nn::{Activation, Mlp};
use slotrl_tensor::{Builder, ParamStore, Scalar, Tensor};

use crate::codec::BinSpec;
use crate::error::{argument, Result};
use crate::sat::{Sat, SatConfig, SatOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub sat: SatConfig,
    pub hidden: usize,
    pub bins: usize,
    pub action_dim: usize,
    pub min_std: f64,
    /// use the change-of-variables entropy of the squashed distribution
    pub exact_entropy: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            sat: SatConfig::default(),
            hidden: 256,
            bins: crate::codec::DEFAULT_BINS,
            action_dim: crate::env::ACTION_DIM,
            min_std: 1e-3,
            exact_entropy: false,
        }
    }
}

/// Backbone plus head producing `[B, T, out]` from `[B, T, N, Dz]`.
#[derive(Clone, Debug)]
pub struct SlotHead<F: Scalar> {
    pub params: ParamStore<F>,
    pub sat: Sat<F>,
    pub head: Mlp<F>,
}

impl<F: Scalar> SlotHead<F> {
    pub fn new(sat: SatConfig, hidden: usize, out: usize, rng: &mut dyn rand::RngCore) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut b = Builder::new(&mut params, rng);
        let e = sat.token_dim;
        let sat = Sat::new(&mut b.sub("sat"), sat)?;
        let head = Mlp::new(&mut b.sub("head"), e, hidden, out, Activation::Silu);
        Ok(Self { params, sat, head })
    }

    pub fn forward(&self, slots: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.head.forward(&self.sat.forward(slots, false)?.outputs))
    }

    /// Head output together with the backbone's attention record.
    pub fn forward_recorded(&self, slots: &Tensor<F>) -> Result<(Tensor<F>, SatOutput<F>)> {
        let out = self.sat.forward(slots, true)?;
        Ok((self.head.forward(&out.outputs), out))
    }
}

/// Categorical scalar model (reward or value) decoded by expectation over bins.
#[derive(Clone, Debug)]
pub struct ScalarModel<F: Scalar> {
    pub net: SlotHead<F>,
    pub bins: BinSpec<F>,
}

impl<F: Scalar> ScalarModel<F> {
    pub fn new(config: &HeadConfig, rng: &mut dyn rand::RngCore) -> Result<Self> {
        Ok(Self {
            net: SlotHead::new(config.sat.clone(), config.hidden, config.bins, rng)?,
            bins: BinSpec::new(config.bins)?,
        })
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.net.params
    }

    /// Bin logits `[B, T, K]`.
    pub fn logits(&self, slots: &Tensor<F>) -> Result<Tensor<F>> {
        self.net.forward(slots)
    }

    /// Expected scalar per step `[B, T]`.
    pub fn predict(&self, slots: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.bins.decode(&self.logits(slots)?))
    }

    /// Mean two-hot cross-entropy of `targets [B * T]` (row-major over `[B, T]`).
    pub fn loss(&self, slots: &Tensor<F>, targets: &[F]) -> Result<Tensor<F>> {
        let logits = self.logits(slots)?;
        Ok(self.bins.loss_tensor(&logits, targets)?.mean_all())
    }
}

/// Online critic and its exponentially averaged target copy.
#[derive(Clone, Debug)]
pub struct CriticPair<F: Scalar> {
    pub online: ScalarModel<F>,
    pub target: ScalarModel<F>,
    pub decay: f64,
}

impl<F: Scalar> CriticPair<F> {
    pub fn new(config: &HeadConfig, decay: f64, rng: &mut dyn rand::RngCore) -> Result<Self> {
        let online = ScalarModel::new(config, rng)?;
        let target = online.clone_detached(config)?;
        Ok(Self { online, target, decay })
    }

    /// `target <- decay * target + (1 - decay) * online`.
    pub fn ema_update(&self) {
        self.target.params().ema_from(self.online.params(), F::of(self.decay));
    }
}

impl<F: Scalar> ScalarModel<F> {
    /// Fresh model with identical structure and copied values (no shared storage).
    fn clone_detached(&self, config: &HeadConfig) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let copy = ScalarModel::new(config, &mut rng)?;
        copy.params().copy_from(self.params());
        copy.params().set_requires_grad(false);
        Ok(copy)
    }
}

/// Two-hot likelihood of `returns` plus `reg_weight` times the cross-entropy
/// towards the target critic's predicted distribution. `slots` is a
/// `[B, T', N, Dz]` history; the loss covers steps `start..start + T` where
/// `returns` holds `B * T` values in row-major `[B, T]` order.
pub fn critic_loss<F: Scalar>(
    critic: &CriticPair<F>,
    slots: &Tensor<F>,
    start: usize,
    returns: &[F],
    reg_weight: f64,
) -> Result<CriticLoss<F>> {
    let slots = slots.detach();
    let b = slots.dim(0).max(1);
    let steps = returns.len() / b;
    if steps * b != returns.len() || start + steps > slots.dim(1) {
        return Err(argument(format!(
            "{} returns from step {start} do not fit a history of shape {:?}",
            returns.len(),
            slots.shape()
        )));
    }
    let k = critic.online.bins.len();
    let flat = critic
        .online
        .logits(&slots)?
        .narrow(1, start, steps)
        .reshape(&[usize::MAX, k]);
    let likelihood = critic.online.bins.loss_tensor(&flat, returns)?.mean_all();
    let target_probs = {
        let _g = slotrl_tensor::no_grad();
        critic
            .target
            .logits(&slots)?
            .narrow(1, start, steps)
            .reshape(&[usize::MAX, k])
            .softmax(-1)
            .detach()
    };
    let regularizer = slotrl_tensor::nn::soft_cross_entropy(&flat, &target_probs).mean_all();
    let total = likelihood.add(&regularizer.mul_scalar(F::of(reg_weight)));
    Ok(CriticLoss {
        total,
        likelihood,
        regularizer,
    })
}

#[derive(Clone, Debug)]
pub struct CriticLoss<F: Scalar> {
    pub total: Tensor<F>,
    pub likelihood: Tensor<F>,
    pub regularizer: Tensor<F>,
}

/// Diagonal normal over pre-squash actions, `[B, T, A]` each.
#[derive(Clone, Debug)]
pub struct ActionDistribution<F: Scalar> {
    pub mean: Tensor<F>,
    pub std: Tensor<F>,
}

impl<F: Scalar> ActionDistribution<F> {
    /// Reparameterized sample `tanh(mean + std * noise)` and the pre-squash value.
    pub fn sample_with(&self, noise: &Tensor<F>) -> (Tensor<F>, Tensor<F>) {
        let u = self.mean.add(&self.std.mul(noise));
        (u.tanh(), u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Tensor<F>, Tensor<F>) {
        let noise: Vec<F> = (0..self.mean.numel())
            .map(|_| F::of(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        self.sample_with(&Tensor::from_vec(noise, self.mean.shape()))
    }

    /// The mean action `tanh(mean)`.
    pub fn mode(&self) -> Tensor<F> {
        self.mean.tanh()
    }

    /// Normal entropy summed over action dimensions, `[B, T]`.
    pub fn normal_entropy(&self) -> Tensor<F> {
        let c = F::of(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln());
        self.std.ln().add_scalar(c).sum_axis(-1, false)
    }

    /// Single-sample entropy of the squashed distribution given the
    /// pre-squash sample `u`: `H(normal) + sum ln(1 - tanh(u)^2)`.
    pub fn squashed_entropy(&self, u: &Tensor<F>) -> Tensor<F> {
        self.normal_entropy().add(&u.log_one_minus_tanh_sq().sum_axis(-1, false))
    }
}

#[derive(Clone, Debug)]
pub struct Actor<F: Scalar> {
    pub net: SlotHead<F>,
    pub action_dim: usize,
    pub min_std: f64,
    pub exact_entropy: bool,
}

impl<F: Scalar> Actor<F> {
    pub fn new(config: &HeadConfig, rng: &mut dyn rand::RngCore) -> Result<Self> {
        Ok(Self {
            net: SlotHead::new(config.sat.clone(), config.hidden, 2 * config.action_dim, rng)?,
            action_dim: config.action_dim,
            min_std: config.min_std,
            exact_entropy: config.exact_entropy,
        })
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.net.params
    }

    pub fn distribution(&self, slots: &Tensor<F>) -> Result<ActionDistribution<F>> {
        let out = self.net.forward(slots)?;
        Ok(self.split(&out))
    }

    fn split(&self, out: &Tensor<F>) -> ActionDistribution<F> {
        let a = self.action_dim;
        ActionDistribution {
            mean: out.narrow(-1, 0, a),
            std: out.narrow(-1, a, a).softplus().add_scalar(F::of(self.min_std)),
        }
    }

    /// Entropy estimate consistent with the configured squashing treatment.
    pub fn entropy(&self, dist: &ActionDistribution<F>, pre_squash: &Tensor<F>) -> Tensor<F> {
        if self.exact_entropy {
            dist.squashed_entropy(pre_squash)
        } else {
            dist.normal_entropy()
        }
    }
}

/// `R_t = r_{t+1} + gamma ((1 - lambda) V_{t+1} + lambda R_{t+1})` with
/// `R_T = V_T`. `rewards[t]` holds `r_{t+1}` (length `T`); `values` has length `T + 1`.
pub fn lambda_returns<F: Scalar>(rewards: &[F], values: &[F], gamma: F, lambda: F) -> Result<Vec<F>> {
    if values.len() != rewards.len() + 1 {
        return Err(argument(format!(
            "{} rewards need {} values, got {}",
            rewards.len(),
            rewards.len() + 1,
            values.len()
        )));
    }
    let t = rewards.len();
    let mut out = vec![F::zero(); t];
    let mut next = values[t];
    for i in (0..t).rev() {
        next = rewards[i] + gamma * ((F::one() - lambda) * values[i + 1] + lambda * next);
        out[i] = next;
    }
    Ok(out)
}

/// Differentiable batched form: `rewards [B, T]`, `values [B, T + 1]` -> `[B, T]`.
pub fn lambda_returns_tensor<F: Scalar>(
    rewards: &Tensor<F>,
    values: &Tensor<F>,
    gamma: f64,
    lambda: f64,
) -> Result<Tensor<F>> {
    if rewards.dims() != 2 || values.dims() != 2 || values.dim(1) != rewards.dim(1) + 1 || values.dim(0) != rewards.dim(0) {
        return Err(argument(format!(
            "rewards {:?} and values {:?} do not align",
            rewards.shape(),
            values.shape()
        )));
    }
    let t = rewards.dim(1);
    let mut next = values.select(1, t);
    let mut out = vec![None; t];
    for i in (0..t).rev() {
        let boot = values
            .select(1, i + 1)
            .mul_scalar(F::of(1.0 - lambda))
            .add(&next.mul_scalar(F::of(lambda)));
        next = rewards.select(1, i).add(&boot.mul_scalar(F::of(gamma)));
        out[i] = Some(next.clone());
    }
    let steps: Vec<Tensor<F>> = out.into_iter().map(|s| s.unwrap()).collect();
    Ok(Tensor::stack(&steps, 1))
}

/// `-mean(R / max(1, s)) - eta * mean(H)`: maximizes normalized return plus entropy.
pub fn actor_loss<F: Scalar>(returns: &Tensor<F>, scale: f64, entropy: &Tensor<F>, eta: f64) -> Tensor<F> {
    let objective = returns.mul_scalar(F::of(1.0 / scale.max(1.0))).mean_all();
    let bonus = entropy.mean_all().mul_scalar(F::of(eta));
    objective.add(&bonus).neg()
}
