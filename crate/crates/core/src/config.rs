//! Run configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsConfig;
use crate::env::{EnvConfig, Task};
use crate::error::{Error, Result};
use crate::heads::HeadConfig;
use crate::sat::SatConfig;
use crate::savi::SaviConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub horizon: usize,
    pub seed_steps: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub lr_dynamics: f64,
    pub lr_reward: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_savi_finetune: f64,
    pub lr_savi_pretrain: f64,
    pub clip_savi: f64,
    pub clip_dynamics: f64,
    pub clip_behavior: f64,
    pub warmup_steps: u64,
    pub critic_ema_decay: f64,
    pub critic_reg_weight: f64,
    pub return_norm_decay: f64,
    pub reconstruction_weight: f64,
    pub batch_size: usize,
    pub env_steps_per_update: usize,
    pub replay_capacity: usize,
    pub total_env_steps: usize,
    pub seed_episodes: usize,
    pub pretrain_frames: usize,
    pub pretrain_steps: u64,
    pub pretrain_batch: usize,
    pub pretrain_clip_len: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub checkpoint_every: usize,
    pub freeze_savi: bool,
    /// imagination start states per replayed window (latest first); `0` uses all
    pub imagination_starts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            seed_steps: 2,
            lambda: 0.95,
            gamma: 0.99,
            entropy_coef: 3e-4,
            lr_dynamics: 1e-4,
            lr_reward: 1e-4,
            lr_actor: 3e-5,
            lr_critic: 3e-5,
            lr_savi_finetune: 3e-5,
            lr_savi_pretrain: 1e-4,
            clip_savi: 0.05,
            clip_dynamics: 3.0,
            clip_behavior: 10.0,
            warmup_steps: 2500,
            critic_ema_decay: 0.98,
            critic_reg_weight: 1.0,
            return_norm_decay: 0.99,
            reconstruction_weight: 1.0,
            batch_size: 16,
            env_steps_per_update: 4,
            replay_capacity: 500,
            total_env_steps: 150_000,
            seed_episodes: 10,
            pretrain_frames: 10_000,
            pretrain_steps: 20_000,
            pretrain_batch: 16,
            pretrain_clip_len: 3,
            eval_every: 10_000,
            eval_episodes: 10,
            checkpoint_every: 10_000,
            freeze_savi: false,
            imagination_starts: 0,
        }
    }
}

impl TrainConfig {
    pub fn window_len(&self) -> usize {
        self.seed_steps + self.horizon
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub savi: SaviConfig,
    pub dynamics: DynamicsConfig,
    pub heads: HeadConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_task(Task::ReachSpecific)
    }
}

impl RunConfig {
    /// Full-size model settings for `task`; slots cover every object plus the
    /// effector and background.
    pub fn for_task(task: Task) -> Self {
        let env = EnvConfig::for_task(task);
        let savi = SaviConfig {
            num_slots: env.max_objects() + 2,
            ..SaviConfig::default()
        };
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs").join(task.name()),
            env,
            savi,
            dynamics: DynamicsConfig::default(),
            heads: HeadConfig::default(),
            train: TrainConfig::default(),
        }
    }

    /// Very small models and budgets that finish in seconds; used by tests
    /// and smoke runs.
    pub fn tiny(task: Task) -> Self {
        let mut c = Self::for_task(task);
        c.env.image_size = 32;
        c.env.episode_length = 12;
        c.savi = SaviConfig {
            image_size: 32,
            num_slots: c.savi.num_slots,
            slot_dim: 16,
            attention_dim: 16,
            encoder_channels: 8,
            encoder_kernel: 3,
            decoder_channels: 8,
            mlp_hidden: 32,
            predictor_heads: 2,
            ..SaviConfig::default()
        };
        c.dynamics = DynamicsConfig {
            slot_dim: 16,
            layers: 1,
            heads: 2,
            token_dim: 16,
            mlp_dim: 32,
            ..DynamicsConfig::default()
        };
        c.heads = HeadConfig {
            sat: SatConfig {
                slot_dim: 16,
                layers: 1,
                heads: 2,
                token_dim: 16,
                mlp_dim: 32,
                registers: 2,
            },
            hidden: 32,
            bins: 41,
            ..HeadConfig::default()
        };
        c.train = TrainConfig {
            horizon: 3,
            seed_steps: 1,
            batch_size: 2,
            replay_capacity: 8,
            total_env_steps: 48,
            seed_episodes: 2,
            pretrain_frames: 36,
            pretrain_steps: 3,
            pretrain_batch: 2,
            pretrain_clip_len: 2,
            warmup_steps: 5,
            eval_every: 24,
            eval_episodes: 2,
            checkpoint_every: 24,
            imagination_starts: 1,
            ..TrainConfig::default()
        };
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.env.validate()?;
        self.savi.validate()?;
        if self.savi.image_size != self.env.image_size {
            return bad(format!(
                "savi.image_size {} differs from env.image_size {}",
                self.savi.image_size, self.env.image_size
            ));
        }
        let dz = self.savi.slot_dim;
        if self.dynamics.slot_dim != dz || self.heads.sat.slot_dim != dz {
            return bad("slot_dim must agree across savi, dynamics and heads".into());
        }
        if self.dynamics.action_dim != crate::env::ACTION_DIM || self.heads.action_dim != crate::env::ACTION_DIM {
            return bad(format!("action_dim must be {}", crate::env::ACTION_DIM));
        }
        let t = &self.train;
        if t.horizon == 0 || t.seed_steps == 0 {
            return bad("horizon and seed_steps must be positive".into());
        }
        if t.window_len() > self.env.episode_length + 1 {
            return bad("training window is longer than an episode".into());
        }
        if !(0.0..=1.0).contains(&t.lambda) || !(t.gamma > 0.0 && t.gamma <= 1.0) {
            return bad("lambda must be in [0, 1] and gamma in (0, 1]".into());
        }
        let positive = [
            ("lr_dynamics", t.lr_dynamics),
            ("lr_reward", t.lr_reward),
            ("lr_actor", t.lr_actor),
            ("lr_critic", t.lr_critic),
            ("lr_savi_finetune", t.lr_savi_finetune),
            ("lr_savi_pretrain", t.lr_savi_pretrain),
            ("clip_savi", t.clip_savi),
            ("clip_dynamics", t.clip_dynamics),
            ("clip_behavior", t.clip_behavior),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return bad(format!("{name} must be positive"));
        }
        if t.batch_size == 0 || t.env_steps_per_update == 0 || t.replay_capacity == 0 || t.pretrain_batch == 0 {
            return bad("batch sizes, update ratio and replay capacity must be positive".into());
        }
        if t.pretrain_steps > 0 && t.pretrain_frames < t.pretrain_clip_len.max(1) {
            return bad("pretraining dataset is smaller than one clip".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
