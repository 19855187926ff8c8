//! The outer training loop: SAVi pretraining on random play, environment
//! interaction, replay-driven updates, evaluation and checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use slotrl_tensor::optim::{clip_grad_norm, collect_grads, Adam, LrSchedule};
use slotrl_tensor::Scalar;

use crate::agent::{ActMode, Agent, BehaviorMetrics, EpisodeMemory, WorldModelMetrics};
use crate::checkpoint::{write_atomic, Archive};
use crate::config::{RunConfig, TrainConfig};
use crate::env::{Action, BlockWorld, Episode};
use crate::error::{Error, Result};
use crate::image::frames_to_tensor;
use crate::replay::ReplayBuffer;
use crate::savi::Savi;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LATEST_FILE: &str = "latest";
const PARAMS_FILE: &str = "params.bin";
const REPLAY_FILE: &str = "replay.bin";
const CONFIG_FILE: &str = "config.toml";
const STATE_FILE: &str = "state.json";

/// Random streams carved out of the run seed.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Init = 0,
    Pretrain = 1,
    Train = 2,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Environment seeds used for evaluation; disjoint from training draws.
pub fn eval_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let base = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (1 << 63);
    (0..episodes as u64).map(|i| base.wrapping_add(i)).collect()
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricRecord {
    Pretrain {
        step: u64,
        loss: f64,
        lr: f64,
        grad_norm: f64,
    },
    Episode {
        env_steps: usize,
        episode: usize,
        policy: &'static str,
        total_reward: f64,
        success: bool,
    },
    Update {
        update: usize,
        env_steps: usize,
        world: WorldModelMetrics,
        behavior: BehaviorMetrics,
    },
    Eval {
        env_steps: usize,
        episodes: usize,
        success_mean: f64,
        success_sd: f64,
        return_mean: f64,
    },
    Checkpoint {
        env_steps: usize,
        name: String,
    },
}

/// Line-delimited JSON metrics, mirrored in memory.
#[derive(Debug, Default)]
pub struct MetricLog {
    path: Option<PathBuf>,
    lines: Vec<String>,
}

impl MetricLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Starts a fresh log file at `path`.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, b"")?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            lines: Vec::new(),
        })
    }

    /// Reopens `path` keeping only its first `keep` lines.
    pub fn reopen(path: &Path, keep: usize) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let lines: Vec<String> = text.lines().take(keep).map(str::to_owned).collect();
        if lines.len() != keep {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("metric log has {} lines, checkpoint expects {keep}", lines.len()),
            });
        }
        let mut body = lines.join("\n");
        if !body.is_empty() {
            body.push('\n');
        }
        write_atomic(path, body.as_bytes())?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            lines,
        })
    }

    pub fn record(&mut self, rec: &MetricRecord) -> Result<()> {
        let line = serde_json::to_string(rec)?;
        if let Some(path) = &self.path {
            let mut f = fs::OpenOptions::new().append(true).open(path)?;
            writeln!(f, "{line}")?;
        }
        self.lines.push(line);
        Ok(())
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub successes: Vec<bool>,
    pub returns: Vec<f64>,
}

impl EvalReport {
    pub fn success_mean(&self) -> f64 {
        let n = self.successes.len().max(1) as f64;
        self.successes.iter().filter(|&&s| s).count() as f64 / n
    }

    /// Sample standard deviation of the per-episode success indicator.
    pub fn success_sd(&self) -> f64 {
        let n = self.successes.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.success_mean();
        let ss: f64 = self.successes.iter().map(|&s| (f64::from(u8::from(s)) - m).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    }

    pub fn return_mean(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len().max(1) as f64
    }

    fn push(&mut self, e: &Episode) {
        self.successes.push(e.success);
        self.returns.push(e.total_reward());
    }
}

/// Runs one episode, asking `policy` for an action after every frame.
pub fn run_episode(
    env: &BlockWorld,
    seed: u64,
    mut policy: impl FnMut(&crate::image::Frame) -> Result<Action>,
) -> Result<Episode> {
    let (mut state, frame) = env.reset(seed);
    let mut episode = Episode::start(frame);
    while !env.is_done(&state) {
        let action = policy(episode.frames.last().unwrap())?;
        let out = env.step(&mut state, &action)?;
        episode.push(action, out);
    }
    episode.finish();
    Ok(episode)
}

/// Success statistics of the agent's mean actions on the given seeds.
pub fn evaluate<F: Scalar>(agent: &Agent<F>, env: &BlockWorld, seeds: &[u64]) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    for &seed in seeds {
        let mut memory = EpisodeMemory::new();
        let e = run_episode(env, seed, |f| agent.act(&mut memory, f, ActMode::Mean, &mut unused))?;
        report.push(&e);
    }
    Ok(report)
}

/// Success statistics of uniformly random actions on the given seeds.
pub fn evaluate_random<R: Rng + ?Sized>(env: &BlockWorld, seeds: &[u64], rng: &mut R) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for &seed in seeds {
        let e = run_episode(env, seed, |_| Ok(Action::random(rng)))?;
        report.push(&e);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub frames: usize,
    pub losses: Vec<f64>,
    /// loss on a fixed probe batch before and after training
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Random-policy episodes until at least `frames` frames are stored.
pub fn collect_random_dataset<R: Rng + ?Sized>(env: &BlockWorld, frames: usize, rng: &mut R) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    let mut total = 0;
    while total < frames {
        let seed = rng.random();
        let e = run_episode(env, seed, |_| Ok(Action::random(rng)))?;
        total += e.len();
        out.push(e);
    }
    Ok(out)
}

/// Trains SAVi's reconstruction objective on clips of random play.
pub fn pretrain_savi<F: Scalar, R: Rng + ?Sized>(
    savi: &Savi<F>,
    env: &BlockWorld,
    train: &TrainConfig,
    rng: &mut R,
    mut log: Option<&mut MetricLog>,
) -> Result<PretrainReport> {
    let clip = train.pretrain_clip_len.max(1);
    if train.pretrain_frames < clip * train.pretrain_batch || env.config().episode_length + 1 < clip {
        return Err(Error::Config(format!(
            "pretraining needs at least {} frames in episodes of at least {clip} frames",
            clip * train.pretrain_batch
        )));
    }
    let data = collect_random_dataset(env, train.pretrain_frames, rng)?;
    let frames = data.iter().map(Episode::len).sum();
    let draw = |rng: &mut R| -> Result<Vec<slotrl_tensor::Tensor<F>>> {
        let picks: Vec<(usize, usize)> = (0..train.pretrain_batch)
            .map(|_| {
                let e = rng.random_range(0..data.len());
                (e, rng.random_range(0..=data[e].len() - clip))
            })
            .collect();
        (0..clip)
            .map(|t| {
                let step: Vec<_> = picks.iter().map(|&(e, s)| &data[e].frames[s + t]).collect();
                frames_to_tensor(&step)
            })
            .collect()
    };
    let probe = draw(rng)?;
    let probe_loss = |savi: &Savi<F>| -> Result<f64> {
        let _g = slotrl_tensor::no_grad();
        Ok(savi.reconstruction_loss(&probe)?.item().as_f64())
    };
    let initial_loss = probe_loss(savi)?;
    let schedule = LrSchedule {
        base: train.lr_savi_pretrain,
        warmup_steps: train.warmup_steps,
        total_steps: Some(train.pretrain_steps),
    };
    let mut adam = Adam::new(&savi.params);
    let mut losses = Vec::with_capacity(train.pretrain_steps as usize);
    for step in 0..train.pretrain_steps {
        let video = draw(rng)?;
        let loss = savi.reconstruction_loss(&video)?;
        let grads = loss.backward();
        let mut g = collect_grads(&savi.params, &grads);
        let grad_norm = clip_grad_norm(&mut g, F::of(train.clip_savi)).as_f64();
        let lr = schedule.at(step);
        adam.step(&savi.params, &g, F::of(lr));
        let loss = loss.item().as_f64();
        losses.push(loss);
        if let Some(log) = log.as_deref_mut() {
            log.record(&MetricRecord::Pretrain {
                step,
                loss,
                lr,
                grad_norm,
            })?;
        }
    }
    Ok(PretrainReport {
        frames,
        losses,
        initial_loss,
        final_loss: probe_loss(savi)?,
    })
}

/// Counters and random state restored on resume.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub env_steps: usize,
    pub episodes: usize,
    pub updates: usize,
    pub pretrained: bool,
    pub next_eval: usize,
    pub next_checkpoint: usize,
    pub metric_lines: usize,
    /// ChaCha word position of the training stream, as a decimal string
    pub rng_word_pos: String,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub env_steps: usize,
    pub episodes: usize,
    pub updates: usize,
    pub final_eval: EvalReport,
    pub checkpoint: Option<PathBuf>,
}

pub struct Trainer<F: Scalar> {
    pub agent: Agent<F>,
    pub env: BlockWorld,
    pub replay: ReplayBuffer,
    pub progress: Progress,
    pub log: MetricLog,
    rng: ChaCha8Rng,
}

impl<F: Scalar> Trainer<F> {
    /// Fresh run writing its log and checkpoints under `config.out_dir`.
    pub fn new(config: RunConfig) -> Result<Self> {
        let log = MetricLog::create(&config.out_dir.join(METRICS_FILE))?;
        Self::with_log(config, log)
    }

    pub fn with_log(config: RunConfig, log: MetricLog) -> Result<Self> {
        config.validate()?;
        let env = BlockWorld::new(config.env.clone())?;
        let agent = Agent::new(config.clone(), &mut stream_rng(config.seed, Stream::Init))?;
        let t = &config.train;
        Ok(Self {
            replay: ReplayBuffer::new(t.replay_capacity),
            progress: Progress {
                next_eval: t.eval_every,
                next_checkpoint: t.checkpoint_every,
                ..Progress::default()
            },
            rng: stream_rng(config.seed, Stream::Train),
            agent,
            env,
            log,
        })
    }

    /// Continues from a checkpoint directory, or from the newest checkpoint of
    /// a run directory holding a `latest` pointer.
    pub fn resume(path: &Path) -> Result<Self> {
        let dir = checkpoint_dir(path);
        let bad = |reason: String| Error::Checkpoint {
            path: dir.clone(),
            reason,
        };
        let mut config = RunConfig::load(&dir.join(CONFIG_FILE))?;
        config.out_dir = dir.parent().map(Path::to_path_buf).unwrap_or_default();
        let progress: Progress = serde_json::from_slice(&fs::read(dir.join(STATE_FILE))?)?;
        let log = MetricLog::reopen(&config.out_dir.join(METRICS_FILE), progress.metric_lines)?;
        let mut trainer = Self::with_log(config, log)?;
        let params = dir.join(PARAMS_FILE);
        trainer.agent.load_archive(&Archive::read(&params)?, &params)?;
        trainer.replay = ReplayBuffer::from_bytes(&fs::read(dir.join(REPLAY_FILE))?)
            .map_err(|e| bad(e.to_string()))?;
        let pos: u128 = progress
            .rng_word_pos
            .parse()
            .map_err(|_| bad(format!("bad random state {:?}", progress.rng_word_pos)))?;
        trainer.rng.set_word_pos(pos);
        trainer.progress = progress;
        Ok(trainer)
    }

    pub fn config(&self) -> &RunConfig {
        &self.agent.config
    }

    pub fn pretrain(&mut self) -> Result<Option<PretrainReport>> {
        if self.progress.pretrained || self.config().train.pretrain_steps == 0 {
            self.progress.pretrained = true;
            return Ok(None);
        }
        let mut rng = stream_rng(self.config().seed, Stream::Pretrain);
        let report = pretrain_savi(&self.agent.savi, &self.env, &self.agent.config.train, &mut rng, Some(&mut self.log))?;
        self.progress.pretrained = true;
        Ok(Some(report))
    }

    /// Collects one episode into replay, with random actions during seeding.
    pub fn collect_episode(&mut self) -> Result<()> {
        let random = self.progress.episodes < self.config().train.seed_episodes;
        let seed = self.rng.random();
        let episode = if random {
            let rng = &mut self.rng;
            run_episode(&self.env, seed, |_| Ok(Action::random(rng)))?
        } else {
            let mut memory = EpisodeMemory::new();
            let (agent, rng) = (&self.agent, &mut self.rng);
            run_episode(&self.env, seed, |f| agent.act(&mut memory, f, ActMode::Sample, rng))?
        };
        self.progress.env_steps += episode.len() - 1;
        self.progress.episodes += 1;
        self.log.record(&MetricRecord::Episode {
            env_steps: self.progress.env_steps,
            episode: self.progress.episodes,
            policy: if random { "random" } else { "actor" },
            total_reward: episode.total_reward(),
            success: episode.success,
        })?;
        self.replay.push(episode);
        Ok(())
    }

    /// One world-model update followed by one behavior update.
    pub fn update(&mut self) -> Result<()> {
        let t = &self.agent.config.train;
        let batch = self.replay.sample::<F, _>(t.batch_size, t.window_len(), &mut self.rng)?;
        let (world, slots) = self.agent.world_model_update(&batch)?;
        let (behavior, _) = self.agent.behavior_update(&slots, &batch.actions, &mut self.rng)?;
        self.progress.updates += 1;
        self.log.record(&MetricRecord::Update {
            update: self.progress.updates,
            env_steps: self.progress.env_steps,
            world,
            behavior,
        })
    }

    pub fn evaluate(&mut self) -> Result<EvalReport> {
        let seeds = eval_seeds(self.config().seed, self.config().train.eval_episodes);
        let report = evaluate(&self.agent, &self.env, &seeds)?;
        self.log.record(&MetricRecord::Eval {
            env_steps: self.progress.env_steps,
            episodes: seeds.len(),
            success_mean: report.success_mean(),
            success_sd: report.success_sd(),
            return_mean: report.return_mean(),
        })?;
        Ok(report)
    }

    /// Writes `ckpt-<env steps>` and then repoints `latest` at it; a crash at
    /// any moment leaves the previous pointer and its directory intact.
    pub fn save_checkpoint(&mut self) -> Result<PathBuf> {
        let out = self.config().out_dir.clone();
        let name = format!("ckpt-{:09}", self.progress.env_steps);
        self.log.record(&MetricRecord::Checkpoint {
            env_steps: self.progress.env_steps,
            name: name.clone(),
        })?;
        self.progress.metric_lines = self.log.lines().len();
        self.progress.rng_word_pos = self.rng.get_word_pos().to_string();
        let tmp = out.join(format!(".{name}.partial"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        self.agent.to_archive().write(&tmp.join(PARAMS_FILE))?;
        fs::write(tmp.join(REPLAY_FILE), self.replay.to_bytes())?;
        fs::write(tmp.join(CONFIG_FILE), self.config().to_toml()?)?;
        fs::write(tmp.join(STATE_FILE), serde_json::to_vec_pretty(&self.progress)?)?;
        let dir = out.join(&name);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::rename(&tmp, &dir)?;
        write_atomic(&out.join(LATEST_FILE), name.as_bytes())?;
        Ok(dir)
    }

    pub fn updates_per_episode(&self) -> usize {
        let t = &self.config().train;
        (self.config().env.episode_length / t.env_steps_per_update).max(1)
    }

    /// Runs until the environment-step budget is spent, then evaluates and
    /// checkpoints once more.
    pub fn run(&mut self) -> Result<TrainSummary> {
        self.pretrain()?;
        let mut checkpoint = None;
        let mut final_eval = None;
        let window = self.config().train.window_len();
        while self.progress.env_steps < self.config().train.total_env_steps {
            self.collect_episode()?;
            let seeded = self.progress.episodes >= self.config().train.seed_episodes;
            if seeded && self.replay.num_windows(window) > 0 {
                for _ in 0..self.updates_per_episode() {
                    self.update()?;
                }
            }
            final_eval = None;
            checkpoint = None;
            let t = self.config().train.clone();
            if t.eval_every > 0 && self.progress.env_steps >= self.progress.next_eval {
                final_eval = Some(self.evaluate()?);
                while self.progress.next_eval <= self.progress.env_steps {
                    self.progress.next_eval += t.eval_every;
                }
            }
            if t.checkpoint_every > 0 && self.progress.env_steps >= self.progress.next_checkpoint {
                while self.progress.next_checkpoint <= self.progress.env_steps {
                    self.progress.next_checkpoint += t.checkpoint_every;
                }
                checkpoint = Some(self.save_checkpoint()?);
            }
        }
        let final_eval = match final_eval {
            Some(r) => r,
            None => self.evaluate()?,
        };
        let checkpoint = match checkpoint {
            Some(c) => c,
            None => self.save_checkpoint()?,
        };
        Ok(TrainSummary {
            env_steps: self.progress.env_steps,
            episodes: self.progress.episodes,
            updates: self.progress.updates,
            final_eval,
            checkpoint: Some(checkpoint),
        })
    }
}

/// Loads the agent stored in a checkpoint (or a run's latest checkpoint).
pub fn load_agent<F: Scalar>(path: &Path) -> Result<Agent<F>> {
    let dir = checkpoint_dir(path);
    let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let mut agent = Agent::new(config.clone(), &mut stream_rng(config.seed, Stream::Init))?;
    let params = dir.join(PARAMS_FILE);
    agent.load_archive(&Archive::read(&params)?, &params)?;
    Ok(agent)
}

/// Follows a run directory's `latest` pointer; other paths are returned as is.
pub fn checkpoint_dir(path: &Path) -> PathBuf {
    match fs::read_to_string(path.join(LATEST_FILE)) {
        Ok(name) => path.join(name.trim()),
        Err(_) => path.to_path_buf(),
    }
}

/// Trains from scratch, or continues from `resume`.
pub fn train<F: Scalar>(config: RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    let mut trainer = match resume {
        Some(path) => Trainer::<F>::resume(path)?,
        None => Trainer::new(config)?,
    };
    trainer.run()
}
