//! The agent: world model, behavior models, their optimizers and the update
//! steps that train them.

use std::path::Path;

use rand::Rng;
use slotrl_tensor::optim::{clip_grad_norm, collect_grads, Adam, LrSchedule};
use slotrl_tensor::{no_grad, Gradients, ParamStore, Scalar, Tensor};

use crate::checkpoint::Archive;
use crate::codec::ReturnNormalizer;
use crate::config::RunConfig;
use crate::dynamics::{dynamics_loss, Dynamics};
use crate::env::{Action, ACTION_DIM};
use crate::error::{argument, Error, Result};
use crate::heads::{actor_loss, critic_loss, lambda_returns_tensor, ActionDistribution, Actor, CriticPair, ScalarModel};
use crate::image::{frames_to_tensor, Frame};
use crate::replay::Batch;
use crate::savi::Savi;

/// Adam with its learning-rate schedule and gradient clipping threshold.
#[derive(Clone, Debug)]
pub struct OptimGroup<F: Scalar> {
    pub adam: Adam<F>,
    pub schedule: LrSchedule,
    pub max_norm: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepStats {
    pub grad_norm: f64,
    pub clipped_norm: f64,
    pub lr: f64,
}

impl<F: Scalar> OptimGroup<F> {
    pub fn new(store: &ParamStore<F>, schedule: LrSchedule, max_norm: f64) -> Self {
        Self {
            adam: Adam::new(store),
            schedule,
            max_norm,
        }
    }

    /// Clips and applies the gradients of `store` found in `grads`.
    pub fn apply(&mut self, store: &ParamStore<F>, grads: &Gradients<F>) -> StepStats {
        let mut g = collect_grads(store, grads);
        let grad_norm = clip_grad_norm(&mut g, F::of(self.max_norm)).as_f64();
        let clipped_norm = slotrl_tensor::optim::global_norm(&g).as_f64();
        let lr = self.schedule.at(self.adam.steps());
        self.adam.step(store, &g, F::of(lr));
        StepStats {
            grad_norm,
            clipped_norm,
            lr,
        }
    }
}

#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct WorldModelMetrics {
    pub savi_loss: f64,
    pub dynamics_loss: f64,
    pub joint_embedding_loss: f64,
    pub dynamics_reconstruction_loss: f64,
    pub reward_loss: f64,
    pub savi: Option<StepStats>,
    pub dynamics: StepStats,
    pub reward: StepStats,
}

#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct BehaviorMetrics {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub critic_regularizer: f64,
    pub return_mean: f64,
    pub return_range: f64,
    pub return_scale: f64,
    pub entropy: f64,
    pub imagined_reward: f64,
    pub actor: StepStats,
    pub critic: StepStats,
}

/// Rollout of the world model under the actor.
#[derive(Clone, Debug)]
pub struct ImaginedTrajectory<F: Scalar> {
    /// `[M, S + T, N, Dz]`: seed context followed by predictions
    pub slots: Tensor<F>,
    /// `[M, T, A]`
    pub actions: Tensor<F>,
    /// `[M, T]`, reward on arriving at each predicted step
    pub rewards: Tensor<F>,
    /// `[M, T + 1]`, values from the last seed step onwards
    pub values: Tensor<F>,
    /// `[M, T]`
    pub returns: Tensor<F>,
    /// `[M, T]`
    pub entropy: Tensor<F>,
    pub seed_len: usize,
}

impl<F: Scalar> ImaginedTrajectory<F> {
    pub fn horizon(&self) -> usize {
        self.slots.dim(1) - self.seed_len
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Mean,
}

/// Recursive slot state carried across the steps of one episode.
#[derive(Clone, Debug, Default)]
pub struct EpisodeMemory<F: Scalar> {
    pub history: Vec<Tensor<F>>,
}

impl<F: Scalar> EpisodeMemory<F> {
    pub fn new() -> Self {
        Self { history: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }
}

fn set_trainable<F: Scalar>(stores: &[&ParamStore<F>], flag: bool) {
    for s in stores {
        s.set_requires_grad(flag);
    }
}

#[derive(Clone, Debug)]
pub struct Agent<F: Scalar> {
    pub config: RunConfig,
    pub savi: Savi<F>,
    pub dynamics: Dynamics<F>,
    pub reward: ScalarModel<F>,
    pub critic: CriticPair<F>,
    pub actor: Actor<F>,
    pub normalizer: ReturnNormalizer,
    pub opt_savi: OptimGroup<F>,
    pub opt_dynamics: OptimGroup<F>,
    pub opt_reward: OptimGroup<F>,
    pub opt_critic: OptimGroup<F>,
    pub opt_actor: OptimGroup<F>,
}

impl<F: Scalar> Agent<F> {
    pub fn new(config: RunConfig, rng: &mut dyn rand::RngCore) -> Result<Self> {
        config.validate()?;
        let savi = Savi::new(config.savi.clone(), rng)?;
        let dynamics = Dynamics::new(config.dynamics.clone(), rng)?;
        let reward = ScalarModel::new(&config.heads, rng)?;
        let critic = CriticPair::new(&config.heads, config.train.critic_ema_decay, rng)?;
        let actor = Actor::new(&config.heads, rng)?;
        let t = &config.train;
        let warm = |lr: f64| LrSchedule::constant_after_warmup(lr, t.warmup_steps);
        let opt_savi = OptimGroup::new(&savi.params, warm(t.lr_savi_finetune), t.clip_savi);
        let opt_dynamics = OptimGroup::new(&dynamics.params, warm(t.lr_dynamics), t.clip_dynamics);
        let opt_reward = OptimGroup::new(reward.params(), warm(t.lr_reward), t.clip_behavior);
        let opt_critic = OptimGroup::new(critic.online.params(), warm(t.lr_critic), t.clip_behavior);
        let opt_actor = OptimGroup::new(actor.params(), warm(t.lr_actor), t.clip_behavior);
        Ok(Self {
            normalizer: ReturnNormalizer::new(t.return_norm_decay),
            config,
            savi,
            dynamics,
            reward,
            critic,
            actor,
            opt_savi,
            opt_dynamics,
            opt_reward,
            opt_critic,
            opt_actor,
        })
    }

    fn seed_steps(&self) -> usize {
        self.config.train.seed_steps
    }

    /// Encodes a batch's frames into slots `[B, L, N, Dz]` without gradients.
    pub fn encode_batch(&self, batch: &Batch<F>) -> Result<Tensor<F>> {
        let _g = no_grad();
        Ok(Tensor::stack(&self.savi.encode_video(&batch.frames)?, 1))
    }

    /// Joint world-model step on replayed windows: optional SAVi fine-tuning,
    /// open-loop dynamics training and reward regression. Returns the
    /// gradient-detached slots of the batch for behavior learning.
    pub fn world_model_update(&mut self, batch: &Batch<F>) -> Result<(WorldModelMetrics, Tensor<F>)> {
        let s = self.seed_steps();
        let horizon = self.config.train.horizon;
        if batch.window_len() != s + horizon {
            return Err(argument(format!(
                "windows of {} steps, expected {}",
                batch.window_len(),
                s + horizon
            )));
        }
        let mut m = WorldModelMetrics::default();
        let slots = if self.config.train.freeze_savi {
            self.encode_batch(batch)?
        } else {
            let encoded = self.savi.encode_video(&batch.frames)?;
            let stacked = Tensor::stack(&encoded, 1);
            let [b, l, n, dz] = stacked.shape()[..] else { unreachable!() };
            let decoded = self.savi.decode(&stacked.reshape(&[b * l, n, dz]))?;
            let size = self.savi.config.image_size;
            let target = batch.frame_tensor().reshape(&[b * l, size, size, 3]);
            let loss = slotrl_tensor::nn::mse(&decoded.composite, &target);
            m.savi_loss = loss.item().as_f64();
            let grads = loss.backward();
            m.savi = Some(self.opt_savi.apply(&self.savi.params, &grads));
            stacked.detach()
        };

        set_trainable(&[&self.savi.params], false);
        let result = (|| -> Result<()> {
            let actions = batch.actions.clone();
            let preds = self.dynamics.rollout(&slots.narrow(1, 0, s), &actions, horizon)?;
            let frames = batch.frame_tensor().narrow(1, s, horizon);
            let loss = dynamics_loss(
                &preds,
                &slots.narrow(1, s, horizon),
                &frames,
                &self.savi,
                self.config.train.reconstruction_weight,
            )?;
            m.dynamics_loss = loss.total.item().as_f64();
            m.joint_embedding_loss = loss.joint_embedding.item().as_f64();
            m.dynamics_reconstruction_loss = loss.reconstruction.as_ref().map_or(0.0, |r| r.item().as_f64());
            let grads = loss.total.backward();
            m.dynamics = self.opt_dynamics.apply(&self.dynamics.params, &grads);
            Ok(())
        })();
        set_trainable(&[&self.savi.params], true);
        result?;

        let targets = batch.rewards.to_vec();
        let loss = self.reward.loss(&slots, &targets)?;
        m.reward_loss = loss.item().as_f64();
        let grads = loss.backward();
        m.reward = self.opt_reward.apply(self.reward.params(), &grads);
        Ok((m, slots))
    }

    /// Rolls the world model forward `horizon` steps from `context [M, S, N, Dz]`
    /// whose first `S - 1` actions are `context_actions [M, S - 1, A]`.
    pub fn imagine<R: Rng + ?Sized>(
        &self,
        context: &Tensor<F>,
        context_actions: Option<&Tensor<F>>,
        horizon: usize,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<ImaginedTrajectory<F>> {
        let s = context.dim(1);
        let mb = context.dim(0);
        if s == 0 {
            return Err(argument("imagination needs at least one context step"));
        }
        let mut actions = match context_actions {
            Some(a) if a.dim(1) == s - 1 => Some(a.clone()),
            None if s == 1 => None,
            _ => return Err(argument("context actions must cover all but the last context step")),
        };
        let mut hist = context.clone();
        let mut taken = Vec::with_capacity(horizon);
        let mut entropies = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let dist = self.actor.distribution(&hist)?;
            let last = s + k - 1;
            let d = ActionDistribution {
                mean: dist.mean.narrow(1, last, 1),
                std: dist.std.narrow(1, last, 1),
            };
            let (a, u) = match mode {
                ActMode::Sample => d.sample(rng),
                ActMode::Mean => (d.mode(), d.mean.clone()),
            };
            entropies.push(self.actor.entropy(&d, &u));
            let all = match &actions {
                Some(prev) => Tensor::cat(&[prev.clone(), a.clone()], 1),
                None => a.clone(),
            };
            let next = self.dynamics.predict_next(&hist, &all)?;
            hist = Tensor::cat(&[hist, next.unsqueeze(1)], 1);
            actions = Some(all);
            taken.push(a);
        }
        let values = self.critic.online.predict(&hist)?.narrow(1, s - 1, horizon + 1);
        let (rewards, returns, actions, entropy) = if horizon == 0 {
            let empty = Tensor::zeros(&[mb, 0]);
            (empty.clone(), empty.clone(), Tensor::zeros(&[mb, 0, ACTION_DIM]), empty)
        } else {
            let rewards = self.reward.predict(&hist)?.narrow(1, s, horizon);
            let t = &self.config.train;
            let returns = lambda_returns_tensor(&rewards, &values, t.gamma, t.lambda)?;
            (rewards, returns, Tensor::cat(&taken, 1), Tensor::cat(&entropies, 1))
        };
        Ok(ImaginedTrajectory {
            slots: hist,
            actions,
            rewards,
            values,
            returns,
            entropy,
            seed_len: s,
        })
    }

    /// Imagination start contexts from replayed slots `[B, L, N, Dz]` and
    /// actions `[B, L, A]`: every window of `S` steps ending after the first
    /// `S - 1` steps, newest first, capped by the configured count.
    pub fn start_contexts(&self, slots: &Tensor<F>, actions: &Tensor<F>) -> (Tensor<F>, Option<Tensor<F>>) {
        let s = self.seed_steps();
        let l = slots.dim(1);
        let cap = match self.config.train.imagination_starts {
            0 => usize::MAX,
            n => n,
        };
        let ends: Vec<usize> = (s - 1..l).rev().take(cap).collect();
        let ctx: Vec<Tensor<F>> = ends.iter().map(|&j| slots.narrow(1, j + 1 - s, s)).collect();
        let acts = (s > 1).then(|| {
            let parts: Vec<Tensor<F>> = ends.iter().map(|&j| actions.narrow(1, j + 1 - s, s - 1)).collect();
            Tensor::cat(&parts, 0)
        });
        (Tensor::cat(&ctx, 0), acts)
    }

    /// Critic, target and actor updates on imagined trajectories; the world
    /// model is left untouched.
    pub fn behavior_update<R: Rng + ?Sized>(
        &mut self,
        slots: &Tensor<F>,
        actions: &Tensor<F>,
        rng: &mut R,
    ) -> Result<(BehaviorMetrics, ImaginedTrajectory<F>)> {
        let (ctx, ctx_actions) = self.start_contexts(&slots.detach(), actions);
        let frozen = [&self.dynamics.params, self.reward.params(), self.critic.online.params()];
        set_trainable(&frozen, false);
        let traj = self.imagine(&ctx, ctx_actions.as_ref(), self.config.train.horizon, ActMode::Sample, rng);
        set_trainable(&frozen, true);
        let traj = traj?;

        let mut m = BehaviorMetrics::default();
        let returns_f64 = traj.returns.to_f64_vec();
        m.return_range = self.normalizer.update(&returns_f64)?;
        m.return_scale = self.normalizer.scale();
        m.return_mean = returns_f64.iter().sum::<f64>() / returns_f64.len() as f64;
        m.entropy = traj.entropy.mean_all().item().as_f64();
        m.imagined_reward = traj.rewards.mean_all().item().as_f64();

        let loss = actor_loss(&traj.returns, m.return_scale, &traj.entropy, self.config.train.entropy_coef);
        m.actor_loss = loss.item().as_f64();
        let actor_grads = loss.backward();

        let s = traj.seed_len;
        let horizon = traj.horizon();
        let targets = traj.returns.detach().to_vec();
        let history = traj.slots.narrow(1, 0, s + horizon - 1).detach();
        let closs = critic_loss(&self.critic, &history, s - 1, &targets, self.config.train.critic_reg_weight)?;
        m.critic_loss = closs.total.item().as_f64();
        m.critic_regularizer = closs.regularizer.item().as_f64();
        let critic_grads = closs.total.backward();

        m.critic = self.opt_critic.apply(self.critic.online.params(), &critic_grads);
        self.critic.ema_update();
        m.actor = self.opt_actor.apply(self.actor.params(), &actor_grads);
        Ok((m, traj))
    }

    /// Chooses an action for the newest `frame`, advancing the episode's slot state.
    pub fn act<R: Rng + ?Sized>(
        &self,
        memory: &mut EpisodeMemory<F>,
        frame: &Frame,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<Action> {
        let _g = no_grad();
        let obs = frames_to_tensor(&[frame])?;
        let (slots, _) = self.savi.step(memory.history.last(), &obs)?;
        memory.history.push(slots);
        let window = self.config.dynamics.max_history.max(1);
        let from = memory.history.len().saturating_sub(window);
        let hist = Tensor::stack(&memory.history[from..], 1);
        let dist = self.actor.distribution(&hist)?;
        let last = hist.dim(1) - 1;
        let d = ActionDistribution {
            mean: dist.mean.narrow(1, last, 1),
            std: dist.std.narrow(1, last, 1),
        };
        let a = match mode {
            ActMode::Sample => d.sample(rng).0,
            ActMode::Mean => d.mode(),
        };
        let v = a.to_f64_vec();
        Action::new(std::array::from_fn(|i| v[i]))
    }

    fn stores(&self) -> [(&'static str, &ParamStore<F>); 6] {
        [
            ("savi", &self.savi.params),
            ("dynamics", &self.dynamics.params),
            ("reward", self.reward.params()),
            ("critic", self.critic.online.params()),
            ("critic_target", self.critic.target.params()),
            ("actor", self.actor.params()),
        ]
    }

    fn groups(&self) -> [(&'static str, &OptimGroup<F>, &ParamStore<F>); 5] {
        [
            ("savi", &self.opt_savi, &self.savi.params),
            ("dynamics", &self.opt_dynamics, &self.dynamics.params),
            ("reward", &self.opt_reward, self.reward.params()),
            ("critic", &self.opt_critic, self.critic.online.params()),
            ("actor", &self.opt_actor, self.actor.params()),
        ]
    }

    /// All parameters and optimizer moments as one archive.
    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        for (name, store) in self.stores() {
            a.add_store(name, store);
        }
        for (name, opt, store) in self.groups() {
            let (steps, m, v) = opt.adam.state();
            a.push(format!("opt/{name}/steps"), &[], vec![steps as f64]);
            for (((pname, t), mi), vi) in store.iter().zip(m).zip(v) {
                a.push(format!("opt/{name}/m/{pname}"), t.shape(), mi.iter().map(|x| x.as_f64()).collect());
                a.push(format!("opt/{name}/v/{pname}"), t.shape(), vi.iter().map(|x| x.as_f64()).collect());
            }
        }
        a.push(
            "normalizer",
            &[3],
            vec![
                self.normalizer.scale_ema,
                self.normalizer.decay,
                if self.normalizer.initialized { 1.0 } else { 0.0 },
            ],
        );
        a
    }

    pub fn load_archive(&mut self, a: &Archive, path: &Path) -> Result<()> {
        for (name, store) in self.stores() {
            a.load_store(name, store, path)?;
        }
        let missing = |k: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: format!("missing array {k}"),
        };
        let mut restored = Vec::new();
        for (name, _, store) in self.groups() {
            let key = format!("opt/{name}/steps");
            let steps = a.get(&key).ok_or_else(|| missing(&key))?.values[0] as u64;
            let mut m = Vec::new();
            let mut v = Vec::new();
            for (pname, _) in store.iter() {
                for (kind, dst) in [("m", &mut m), ("v", &mut v)] {
                    let key = format!("opt/{name}/{kind}/{pname}");
                    let arr = a.get(&key).ok_or_else(|| missing(&key))?;
                    dst.push(arr.values.iter().map(|&x| F::of(x)).collect::<Vec<F>>());
                }
            }
            restored.push((steps, m, v));
        }
        let mut it = restored.into_iter();
        for opt in [
            &mut self.opt_savi,
            &mut self.opt_dynamics,
            &mut self.opt_reward,
            &mut self.opt_critic,
            &mut self.opt_actor,
        ] {
            let (steps, m, v) = it.next().unwrap();
            opt.adam.set_state(steps, m, v);
        }
        let n = a.get("normalizer").ok_or_else(|| missing("normalizer"))?;
        self.normalizer = ReturnNormalizer {
            scale_ema: n.values[0],
            decay: n.values[1],
            initialized: n.values[2] != 0.0,
        };
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{BlockWorld, Task};
    use crate::heads::lambda_returns;
    use crate::replay::ReplayBuffer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(freeze: bool) -> (Agent<f64>, Batch<f64>) {
        let mut cfg = RunConfig::tiny(Task::ReachSpecific);
        cfg.train.warmup_steps = 0;
        cfg.train.freeze_savi = freeze;
        cfg.train.seed_steps = 2;
        cfg.train.horizon = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let agent = Agent::new(cfg.clone(), &mut rng).unwrap();
        let world = BlockWorld::new(cfg.env.clone()).unwrap();
        let mut replay = ReplayBuffer::new(4);
        for seed in 0..2 {
            replay.push(world.rollout(seed, |_, _| Action::random(&mut rng)).unwrap());
        }
        let batch = replay.sample(2, cfg.train.window_len(), &mut rng).unwrap();
        (agent, batch)
    }

    #[test]
    fn frozen_savi_is_untouched_and_norms_respect_clips() {
        let (mut agent, batch) = setup(true);
        let before = agent.savi.params.snapshot();
        let dyn_before = agent.dynamics.params.snapshot();
        let (m, slots) = agent.world_model_update(&batch).unwrap();
        assert_eq!(agent.savi.params.snapshot(), before);
        assert_ne!(agent.dynamics.params.snapshot(), dyn_before);
        assert!(m.savi.is_none());
        assert_eq!(slots.shape(), [2, 4, agent.savi.num_slots(), 16]);
        let t = &agent.config.train;
        assert!(m.dynamics.clipped_norm <= t.clip_dynamics * (1.0 + 1e-9));
        assert!(m.reward.clipped_norm <= t.clip_behavior * (1.0 + 1e-9));

        let (mut tuned, batch) = setup(false);
        let before = tuned.savi.params.snapshot();
        let (m, _) = tuned.world_model_update(&batch).unwrap();
        assert_ne!(tuned.savi.params.snapshot(), before);
        assert!(m.savi.unwrap().clipped_norm <= tuned.config.train.clip_savi * (1.0 + 1e-9));
    }

    #[test]
    fn behavior_update_leaves_world_model_alone() {
        let (mut agent, batch) = setup(false);
        let slots = agent.encode_batch(&batch).unwrap();
        let frozen = |a: &Agent<f64>| {
            (a.savi.params.snapshot(), a.dynamics.params.snapshot(), a.reward.params().snapshot())
        };
        let world = frozen(&agent);
        let actor = agent.actor.params().snapshot();
        let target = agent.critic.target.params().snapshot();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(!agent.normalizer.initialized);
        let (m, traj) = agent.behavior_update(&slots, &batch.actions, &mut rng).unwrap();
        assert_eq!(frozen(&agent), world);
        assert_ne!(agent.actor.params().snapshot(), actor);
        assert_ne!(agent.critic.target.params().snapshot(), target);
        // first update sets the scale to the observed range, a single step
        assert!(agent.normalizer.initialized);
        assert_eq!(agent.normalizer.scale_ema, m.return_range);
        assert_eq!(traj.returns.dim(0), batch.len() * agent.config.train.imagination_starts);
    }

    #[test]
    fn imagination_base_case_determinism_and_returns() {
        let (agent, batch) = setup(false);
        let slots = agent.encode_batch(&batch).unwrap();
        let (ctx, acts) = agent.start_contexts(&slots, &batch.actions);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t0 = agent.imagine(&ctx, acts.as_ref(), 0, ActMode::Sample, &mut rng).unwrap();
        assert_eq!(t0.slots.dim(1), 2);
        assert_eq!(t0.values.shape(), [2, 1]);
        assert_eq!(t0.returns.numel(), 0);

        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            agent.imagine(&ctx, acts.as_ref(), 3, ActMode::Mean, &mut rng).unwrap()
        };
        let (a, b) = (run(0), run(9));
        assert_eq!(a.slots.to_vec(), b.slots.to_vec());
        assert_eq!(a.returns.to_vec(), b.returns.to_vec());

        let t = &agent.config.train;
        let (r, v, g) = (a.rewards.to_vec(), a.values.to_vec(), a.returns.to_vec());
        for row in 0..a.returns.dim(0) {
            let oracle = lambda_returns(&r[row * 3..row * 3 + 3], &v[row * 4..row * 4 + 4], t.gamma, t.lambda).unwrap();
            for (x, y) in g[row * 3..row * 3 + 3].iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn acting_tracks_history_and_stays_in_bounds() {
        let (agent, _) = setup(false);
        let world = BlockWorld::new(agent.config.env.clone()).unwrap();
        let (_, frame) = world.reset(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut memory = EpisodeMemory::new();
        let mut again = EpisodeMemory::new();
        for step in 1..=3 {
            let a = agent.act(&mut memory, &frame, ActMode::Sample, &mut rng).unwrap();
            assert!(a.0.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!(memory.len(), step);
            let m1 = agent.act(&mut again, &frame, ActMode::Mean, &mut rng).unwrap();
            let mut replay = again.clone();
            replay.history.pop();
            assert_eq!(agent.act(&mut replay, &frame, ActMode::Mean, &mut rng).unwrap(), m1);
        }
        memory.reset();
        assert!(memory.is_empty());
    }

    #[test]
    fn archive_restores_parameters_and_optimizer_state() {
        let (mut agent, batch) = setup(false);
        agent.world_model_update(&batch).unwrap();
        let archive = agent.to_archive();
        let (mut fresh, _) = {
            let mut cfg = agent.config.clone();
            cfg.seed = 99;
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            (Agent::<f64>::new(cfg, &mut rng).unwrap(), ())
        };
        fresh.load_archive(&archive, Path::new("mem")).unwrap();
        assert_eq!(fresh.dynamics.params.snapshot(), agent.dynamics.params.snapshot());
        assert_eq!(fresh.opt_dynamics.adam.steps(), 1);
        assert_eq!(fresh.to_archive(), archive);
    }
}
