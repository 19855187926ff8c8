//! `slotrl` command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use slotrl::agent::{ActMode, Agent, EpisodeMemory};
use slotrl::config::RunConfig;
use slotrl::env::{Action, BlockWorld, Task};
use slotrl::image::frames_to_tensor;
use slotrl::tensor::{no_grad, Scalar, Tensor};
use slotrl::trainer::{self, eval_seeds, run_episode, stream_rng, EvalReport, Stream};
use slotrl::viz::{attention_rollout, export_rollout_strip, render_attention_overlay, AttentionRecord};
use slotrl::Error;

#[derive(Parser)]
#[command(name = "slotrl", version, about = "Object-centric model-based RL on a 2D blockworld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain SAVi, then train world model and behaviors
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint or run directory
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Report mean success and standard deviation over evaluation episodes
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        episodes: Option<usize>,
        /// Act uniformly at random instead of using the actor
        #[arg(long)]
        random: bool,
    },
    /// Write an open-loop prediction strip as PNG
    Rollout {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Total columns: seed frames plus predicted frames
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        seed_frames: usize,
    },
    /// Write attention-rollout overlays for one head
    Attn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Environment steps taken by the actor before the readout
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = HeadChoice::Actor)]
        head: HeadChoice,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Task preset used when no configuration file is given
    #[arg(long, default_value = "reach-specific")]
    task: Task,
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
}

#[derive(Args)]
struct ModelArgs {
    /// Checkpoint or run directory; without it a freshly initialized agent is used
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Tiny,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadChoice {
    Reward,
    Critic,
    Actor,
}

impl Common {
    fn config(&self) -> slotrl::Result<RunConfig> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Preset::Full) => RunConfig::for_task(self.task),
            (None, Preset::Tiny) => RunConfig::tiny(self.task),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_or_init<F: Scalar>(common: &Common, model: &ModelArgs) -> slotrl::Result<(Agent<F>, u64, PathBuf)> {
    let cfg = common.config()?;
    let agent = match &model.checkpoint {
        Some(path) => trainer::load_agent(path)?,
        None => Agent::new(cfg.clone(), &mut stream_rng(cfg.seed, Stream::Init))?,
    };
    let seed = common.seed.unwrap_or(agent.config.seed);
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    fs::create_dir_all(&out)?;
    Ok((agent, seed, out))
}

fn train<F: Scalar>(common: &Common, resume: Option<&Path>) -> slotrl::Result<()> {
    let cfg = common.config()?;
    let summary = trainer::train::<F>(cfg, resume)?;
    let e = &summary.final_eval;
    println!(
        "trained {} env steps, {} updates; success {:.3} ± {:.3}",
        summary.env_steps,
        summary.updates,
        e.success_mean(),
        e.success_sd()
    );
    if let Some(c) = summary.checkpoint {
        println!("checkpoint {}", c.display());
    }
    Ok(())
}

fn eval<F: Scalar>(common: &Common, model: &ModelArgs, episodes: Option<usize>, random: bool) -> slotrl::Result<()> {
    let (agent, seed, out) = load_or_init::<F>(common, model)?;
    let mut env_cfg = agent.config.env.clone();
    env_cfg.task = common.config()?.env.task;
    let env = BlockWorld::new(env_cfg)?;
    let seeds = eval_seeds(seed, episodes.unwrap_or(agent.config.train.eval_episodes));
    let report: EvalReport = if random {
        trainer::evaluate_random(&env, &seeds, &mut stream_rng(seed, Stream::Train))?
    } else {
        trainer::evaluate(&agent, &env, &seeds)?
    };
    println!(
        "{}: success {:.3} ± {:.3} over {} episodes (mean return {:.3})",
        env.config().task.name(),
        report.success_mean(),
        report.success_sd(),
        seeds.len(),
        report.return_mean()
    );
    let json = serde_json::json!({
        "task": env.config().task.name(),
        "policy": if random { "random" } else { "actor" },
        "seed": seed,
        "success_mean": report.success_mean(),
        "success_sd": report.success_sd(),
        "return_mean": report.return_mean(),
        "successes": report.successes,
    });
    fs::write(out.join("eval.json"), serde_json::to_vec_pretty(&json)?)?;
    Ok(())
}

fn rollout<F: Scalar>(common: &Common, model: &ModelArgs, frames: usize, seed_frames: usize) -> slotrl::Result<()> {
    let (agent, seed, out) = load_or_init::<F>(common, model)?;
    let env = BlockWorld::new(agent.config.env.clone())?;
    let limit = agent.config.env.episode_length + 1;
    if frames == 0 || frames > limit || seed_frames == 0 || seed_frames > frames {
        return Err(Error::Usage(format!(
            "need 1 <= --seed-frames <= --frames <= {limit}, got {seed_frames} and {frames}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Train);
    let ep = run_episode(&env, seed, |_| Ok(Action::random(&mut rng)))?;
    let path = out.join("rollout.png");
    let strip = export_rollout_strip(&agent.savi, &agent.dynamics, &ep.frames[..frames], &ep.actions, seed_frames, &path)?;
    println!("{} rows x {} columns -> {}", strip.rows, strip.columns, path.display());
    Ok(())
}

fn attn<F: Scalar>(common: &Common, model: &ModelArgs, steps: usize, head: HeadChoice) -> slotrl::Result<()> {
    let (agent, seed, out) = load_or_init::<F>(common, model)?;
    let env = BlockWorld::new(agent.config.env.clone())?;
    let (mut state, frame) = env.reset(seed);
    let mut memory = EpisodeMemory::new();
    let mut rng = stream_rng(seed, Stream::Train);
    let mut frame = frame;
    for _ in 0..steps.min(agent.config.env.episode_length) {
        let a = agent.act(&mut memory, &frame, ActMode::Mean, &mut rng)?;
        frame = env.step(&mut state, &a)?.frame;
    }
    let _g = no_grad();
    let (slots, _) = agent.savi.step(memory.history.last(), &frames_to_tensor(&[&frame])?)?;
    memory.history.push(slots.clone());
    let hist = Tensor::stack(&memory.history, 1);
    let net = match head {
        HeadChoice::Reward => &agent.reward.net,
        HeadChoice::Critic => &agent.critic.online.net,
        HeadChoice::Actor => &agent.actor.net,
    };
    let (_, sat) = net.forward_recorded(&hist)?;
    let record = AttentionRecord::from_output(&sat, 0)?;
    let relevance = attention_rollout(&record, record.layout.steps - 1)?;
    let last = relevance.at_step(relevance.steps - 1);
    let total: f64 = last.iter().sum();
    let last: Vec<f64> = last.iter().map(|v| v / total).collect();
    let dec = agent.savi.decode(&slots)?;
    let overlay = render_attention_overlay(&dec, 0, &last)?;
    frame.write_png(&out.join("attn-frame.png"))?;
    overlay.overlay.write_png(&out.join("attn-overlay.png"))?;
    overlay.colormap.write_png(&out.join("attn-heat.png"))?;
    let json = serde_json::json!({
        "steps": relevance.steps,
        "slots": relevance.slots,
        "relevance": relevance.values,
        "final_step": last,
    });
    fs::write(out.join("relevance.json"), serde_json::to_vec_pretty(&json)?)?;
    let ranked = last.iter().enumerate().fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    println!("most relevant slot {} ({:.3}); images in {}", ranked.0, ranked.1, out.display());
    Ok(())
}

fn dispatch<F: Scalar>(cmd: &Command) -> slotrl::Result<()> {
    match cmd {
        Command::Train { common, resume } => train::<F>(common, resume.as_deref()),
        Command::Eval {
            common,
            model,
            episodes,
            random,
        } => eval::<F>(common, model, *episodes, *random),
        Command::Rollout {
            common,
            model,
            frames,
            seed_frames,
        } => rollout::<F>(common, model, *frames, *seed_frames),
        Command::Attn {
            common,
            model,
            steps,
            head,
        } => attn::<F>(common, model, *steps, *head),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let precision = match &cli.command {
        Command::Train { common, .. }
        | Command::Eval { common, .. }
        | Command::Rollout { common, .. }
        | Command::Attn { common, .. } => common.precision,
    };
    let result = match precision {
        Precision::F32 => dispatch::<f32>(&cli.command),
        Precision::F64 => dispatch::<f64>(&cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Usage(_) | Error::Config(_) | Error::TomlDe(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
