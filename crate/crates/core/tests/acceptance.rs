//! Acceptance suite: one status line per criterion.
//!
//! `cargo test -p slotrl --test acceptance` runs every criterion that fits a
//! workstation CPU. The two learning milestones run only with
//! `-- --full` (or `SLOTRL_FULL_ACCEPTANCE=1`) and otherwise report NOT RUN.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slotrl::codec::{symexp, symlog, BinSpec};
use slotrl::config::RunConfig;
use slotrl::dynamics::{Dynamics, DynamicsConfig};
use slotrl::env::{reach_reward, push_reward, Action, BlockWorld, EnvConfig, Task};
use slotrl::heads::lambda_returns;
use slotrl::image::frames_to_tensor;
use slotrl::sat::{alibi_slopes, attention_bias, Sat, SatConfig, TokenLayout};
use slotrl::savi::{Savi, SaviConfig};
use slotrl::tensor::{no_grad, Tensor};
use slotrl::trainer::{self, eval_seeds, run_episode, MetricLog, Trainer};
use slotrl::viz::{attention_rollout, AttentionRecord};

const ROUNDTRIP_REL_TOL: f64 = 1e-9;
const TWOHOT_TOL: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-4;
const LAMBDA_TOL: f64 = 1e-6;
const EQUIVARIANCE_TOL: f64 = 1e-5;
const SAT_INVARIANCE_TOL: f64 = 1e-6;
const REWARD_TOL: f64 = 1e-9;
const SUCCESS_DISTANCE: f64 = 0.05;
const ROLLOUT_TOL: f64 = 1e-6;
const OPEN_LOOP_RATIO: f64 = 3.0;
const MIN_PSNR_DB: f64 = 25.0;
const REACH_SUCCESS: f64 = 0.8;
const DISTINCT_MARGIN: f64 = 0.4;

enum Status {
    Pass,
    Fail,
    NotRun,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Self {
            status: if ok { Status::Pass } else { Status::Fail },
            detail,
        }
    }
}

fn timed(budget: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut out = f();
    let took = start.elapsed();
    if took > budget {
        out.status = Status::Fail;
        out.detail = format!("{}; exceeded {:?} budget", out.detail, budget);
    }
    out.detail = format!("{} [{:.2}s]", out.detail, took.as_secs_f64());
    out
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn codec_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_rt: f64 = 0.0;
    for _ in 0..1000 {
        let x = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * 10f64.powf(rng.random_range(-6.0..8.0));
        worst_rt = worst_rt.max(rel_err(symexp(symlog(x).unwrap()).unwrap(), x));
    }
    let bins = BinSpec::<f64>::new(255).unwrap();
    let grid = bins.symlog_grid().to_vec();
    let mut worst_th: f64 = 0.0;
    for _ in 0..1000 {
        let s: f64 = rng.random_range(-20.0..20.0);
        let y = s.signum() * s.abs().exp_m1();
        let w = bins.twohot(y).unwrap();
        let recon: f64 = w.iter().zip(&grid).map(|(a, b)| a * b).sum();
        worst_th = worst_th.max((recon - symlog(y).unwrap()).abs());
    }
    let mut worst_grad: f64 = 0.0;
    for _ in 0..20 {
        let logits: Vec<f64> = (0..255).map(|_| rng.random_range(-3.0..3.0)).collect();
        let target = symexp(rng.random_range(-15.0..15.0)).unwrap();
        let x = Tensor::var(logits.clone(), &[1, 255]);
        let loss = bins.loss_tensor(&x, &[target]).unwrap().sum_all();
        let g = loss.backward();
        let analytic = g.get(&x).unwrap().to_vec();
        let h = 1e-5;
        let mut num = Vec::with_capacity(255);
        for i in 0..255 {
            let mut up = logits.clone();
            let mut dn = logits.clone();
            up[i] += h;
            dn[i] -= h;
            num.push((bins.categorical_loss(&up, target).unwrap() - bins.categorical_loss(&dn, target).unwrap()) / (2.0 * h));
        }
        let diff: f64 = analytic.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
        worst_grad = worst_grad.max(diff / scale);
    }
    Outcome::check(
        worst_rt <= ROUNDTRIP_REL_TOL && worst_th <= TWOHOT_TOL && worst_grad < GRAD_REL_TOL,
        format!("round-trip rel {worst_rt:.2e}, two-hot {worst_th:.2e}, gradient rel {worst_grad:.2e}"),
    )
}

/// `(1 - l) sum_n l^(n-1) G(n) + l^(H-1) G(H)` with n-step returns `G(n)`.
fn brute_lambda(r: &[f64], v: &[f64], gamma: f64, lambda: f64, t: usize) -> f64 {
    let horizon = r.len() - t;
    let n_step = |n: usize| -> f64 {
        let mut g = 0.0;
        for i in 0..n {
            g += gamma.powi(i as i32) * r[t + i];
        }
        g + gamma.powi(n as i32) * v[t + n]
    };
    let mut total = 0.0;
    for n in 1..horizon {
        total += (1.0 - lambda) * lambda.powi(n as i32 - 1) * n_step(n);
    }
    total + lambda.powi(horizon as i32 - 1) * n_step(horizon)
}

fn lambda_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for _ in 0..1000 {
        let t = rng.random_range(0..=10);
        let gamma = rng.random_range(0.5..=1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let r: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..=t).map(|_| rng.random_range(-5.0..5.0)).collect();
        let out = lambda_returns(&r, &v, gamma, lambda).unwrap();
        for i in 0..t {
            worst = worst.max((out[i] - brute_lambda(&r, &v, gamma, lambda, i)).abs());
        }
        let td = lambda_returns(&r, &v, gamma, 0.0).unwrap();
        let mc = lambda_returns(&r, &v, gamma, 1.0).unwrap();
        let mut acc = v[t];
        for i in (0..t).rev() {
            exact &= td[i] == r[i] + gamma * v[i + 1];
            acc = r[i] + gamma * acc;
            exact &= mc[i] == acc;
        }
    }
    Outcome::check(
        worst <= LAMBDA_TOL && exact,
        format!("max deviation from expansion {worst:.2e}, closed forms exact: {exact}"),
    )
}

fn tiny_savi(rng: &mut ChaCha8Rng, n: usize) -> Savi<f64> {
    let cfg = SaviConfig {
        image_size: 16,
        num_slots: n,
        slot_dim: 8,
        attention_dim: 8,
        encoder_channels: 8,
        encoder_kernel: 3,
        decoder_channels: 4,
        mlp_hidden: 16,
        predictor_heads: 2,
        ..SaviConfig::default()
    };
    Savi::new(cfg, rng).unwrap()
}

fn tiny_dynamics(rng: &mut ChaCha8Rng) -> Dynamics<f64> {
    let cfg = DynamicsConfig {
        slot_dim: 8,
        layers: 2,
        heads: 2,
        token_dim: 8,
        mlp_dim: 16,
        ..DynamicsConfig::default()
    };
    Dynamics::new(cfg, rng).unwrap()
}

fn tiny_sat(rng: &mut ChaCha8Rng) -> Sat<f64> {
    let cfg = SatConfig {
        slot_dim: 8,
        layers: 2,
        heads: 2,
        token_dim: 8,
        mlp_dim: 16,
        registers: 2,
    };
    Sat::standalone(cfg, rng).unwrap().0
}

/// Reorders axis `axis` (the slot axis) of a row-major tensor by `perm`,
/// optionally with a separate permutation per index of axis `axis - 1`.
fn permute_slots(x: &Tensor<f64>, axis: usize, perms: &[Vec<usize>]) -> Tensor<f64> {
    let shape = x.shape().to_vec();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer_step: usize = if axis == 0 { 1 } else { shape[axis - 1] };
    let data = x.to_vec();
    let mut out = vec![0.0; data.len()];
    for (block, (src, dst)) in data.chunks(n * inner).zip(out.chunks_mut(n * inner)).enumerate() {
        let perm = &perms[(block % outer_step) % perms.len()];
        for (i, &p) in perm.iter().enumerate() {
            dst[i * inner..(i + 1) * inner].copy_from_slice(&src[p * inner..(p + 1) * inner]);
        }
    }
    Tensor::from_vec(out, &shape)
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.to_vec().iter().zip(b.to_vec()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn equivariance_suite() -> Outcome {
    let _g = no_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut savi_err, mut dyn_err, mut sat_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..100 {
        let n = rng.random_range(2..=5);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let perm = vec![perm];

        let savi = tiny_savi(&mut rng, n);
        let slots = Tensor::randn(&[2, n, 8], &mut rng);
        let feats = Tensor::randn(&[2, 12, 8], &mut rng);
        let (a, _) = savi.slot_attention.refine(&slots, &feats, 3).unwrap();
        let (b, _) = savi.slot_attention.refine(&permute_slots(&slots, 1, &perm), &feats, 3).unwrap();
        savi_err = savi_err.max(max_abs_diff(&permute_slots(&a, 1, &perm), &b));

        let dynamics = tiny_dynamics(&mut rng);
        let t = rng.random_range(1..=4);
        let hist = Tensor::randn(&[2, t, n, 8], &mut rng);
        let acts = Tensor::rand_uniform(&[2, t, 4], -1.0, 1.0, &mut rng);
        let a = dynamics.predict_next(&hist, &acts).unwrap();
        let b = dynamics.predict_next(&permute_slots(&hist, 2, &perm), &acts).unwrap();
        dyn_err = dyn_err.max(max_abs_diff(&permute_slots(&a, 1, &perm), &b));

        let sat = tiny_sat(&mut rng);
        let per_step: Vec<Vec<usize>> = (0..t)
            .map(|_| {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let hist1 = Tensor::randn(&[1, t, n, 8], &mut rng);
        let a = sat.forward(&hist1, false).unwrap().outputs;
        let b = sat.forward(&permute_slots(&hist1, 2, &per_step), false).unwrap().outputs;
        sat_err = sat_err.max(max_abs_diff(&a, &b));
    }
    Outcome::check(
        savi_err <= EQUIVARIANCE_TOL && dyn_err <= EQUIVARIANCE_TOL && sat_err <= SAT_INVARIANCE_TOL,
        format!("refine {savi_err:.2e}, predict_next {dyn_err:.2e}, SAT {sat_err:.2e} over 100 trials"),
    )
}

fn causality_suite() -> Outcome {
    let _g = no_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut leaks = 0;
    for _ in 0..30 {
        let t = rng.random_range(2..=6);
        let n = rng.random_range(1..=4);
        let k = rng.random_range(1..t);
        let hist = Tensor::randn(&[1, t, n, 8], &mut rng);
        let acts = Tensor::rand_uniform(&[1, t, 4], -1.0, 1.0, &mut rng);
        let noise = Tensor::randn(&[1, t - k, n, 8], &mut rng);
        let perturbed = Tensor::cat(&[hist.narrow(1, 0, k), hist.narrow(1, k, t - k).add(&noise)], 1);
        let acts2 = Tensor::cat(&[acts.narrow(1, 0, k), Tensor::rand_uniform(&[1, t - k, 4], -1.0, 1.0, &mut rng)], 1);

        let sat = tiny_sat(&mut rng);
        let a = sat.forward(&hist, false).unwrap().outputs.narrow(1, 0, k).to_vec();
        let b = sat.forward(&perturbed, false).unwrap().outputs.narrow(1, 0, k).to_vec();
        leaks += usize::from(a != b);

        let dynamics = tiny_dynamics(&mut rng);
        let a = dynamics.predict_sequence(&hist, &acts).unwrap().narrow(1, 0, k).to_vec();
        let b = dynamics.predict_sequence(&perturbed, &acts2).unwrap().narrow(1, 0, k).to_vec();
        leaks += usize::from(a != b);
    }
    let mut mismatches = 0;
    for _ in 0..1000 {
        let layout = TokenLayout {
            steps: rng.random_range(1..=5),
            slots: rng.random_range(1..=5),
            registers: rng.random_range(0..=3),
        };
        let heads = rng.random_range(1..=4);
        let l = layout.len();
        let (q, k) = (rng.random_range(0..l), rng.random_range(0..l));
        let per = layout.slots + layout.registers + 1;
        let (sq, sk) = (q / per, k / per);
        let key_is_slot = k % per < layout.slots;
        let oracle = sk <= sq && (key_is_slot || sk == sq);
        let bias = attention_bias::<f64>(&layout, heads).to_vec();
        let slopes = alibi_slopes(heads);
        for (h, m) in slopes.iter().enumerate() {
            let b = bias[(h * l + q) * l + k];
            let expect_slope = 2f64.powf(-8.0 * (h + 1) as f64 / heads as f64);
            let ok = if oracle {
                b == -expect_slope * (sq - sk) as f64 && *m == expect_slope
            } else {
                b == f64::NEG_INFINITY
            };
            mismatches += usize::from(!ok);
        }
    }
    Outcome::check(
        leaks == 0 && mismatches == 0,
        format!("{leaks} future-to-past leaks in 60 perturbations, {mismatches} mask mismatches on 1000 pairs"),
    )
}

fn env_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let norm = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut worst: f64 = 0.0;
    for task in Task::ALL {
        let cfg = EnvConfig::for_task(task);
        assert!(cfg.t1 == 20.0 && cfg.t2 == 10.0);
        let world = BlockWorld::new(cfg).unwrap();
        for _ in 0..250 {
            let (mut state, _) = world.reset(rng.random());
            let out = world.step(&mut state, &Action::random(&mut rng)).unwrap();
            let p_t = state.objects[state.target_index].position;
            let oracle = if task.is_push() {
                0.9 * (-20.0 * norm(p_t, state.goal)).exp() + 0.1 * (-10.0 * norm(state.effector, p_t)).exp()
            } else {
                (-20.0 * norm(state.effector, p_t)).exp()
            };
            worst = worst.max((out.reward - oracle).abs());
            let e = [rng.random(), rng.random()];
            let c = [rng.random(), rng.random()];
            let g = [rng.random(), rng.random()];
            worst = worst.max((reach_reward(e, c, 20.0) - (-20.0 * norm(e, c)).exp()).abs());
            let push = 0.9 * (-20.0 * norm(c, g)).exp() + 0.1 * (-10.0 * norm(e, c)).exp();
            worst = worst.max((push_reward(e, c, g, 20.0, 10.0) - push).abs());
        }
    }
    // final-step success at distances around the threshold
    let mut boundary_ok = true;
    let mut cases = 0;
    for task in [Task::ReachSpecific, Task::PushSpecific] {
        let cfg = EnvConfig::for_task(task);
        assert_eq!(cfg.success_distance, SUCCESS_DISTANCE);
        let world = BlockWorld::new(cfg.clone()).unwrap();
        for d in [0.049, 0.051, 0.05 - 1e-9, 0.05 + 1e-9, 0.05] {
            let (mut state, _) = world.reset(cases as u64);
            let target = state.target_index;
            if task.is_push() {
                state.goal = [0.5, 0.5];
                state.objects[target].position = [0.5 + d, 0.5];
                state.effector = [0.1, 0.9];
                for (i, o) in state.objects.iter_mut().enumerate() {
                    if i != target {
                        o.position = [0.9, 0.1 + 0.001 * i as f64];
                    }
                }
            } else {
                state.objects[target].position = [0.5, 0.5];
                state.effector = [0.5 + d, 0.5];
            }
            let measured = world.task_distance(&state);
            state.step_count = cfg.episode_length - 2;
            let early = world.step(&mut state, &Action::zero()).unwrap();
            let last = world.step(&mut state, &Action::zero()).unwrap();
            boundary_ok &= !early.success && !early.done && last.done;
            boundary_ok &= last.success == (measured < SUCCESS_DISTANCE);
            if d == 0.049 || d == 0.05 - 1e-9 {
                boundary_ok &= last.success;
            }
            if d >= 0.051 || d == 0.05 + 1e-9 {
                boundary_ok &= !last.success;
            }
            cases += 1;
        }
    }
    Outcome::check(
        worst <= REWARD_TOL && boundary_ok,
        format!("max reward deviation {worst:.2e}, {cases} threshold cases consistent: {boundary_ok}"),
    )
}

/// Row-normalized, head-averaged residual attention, built with explicit loops.
fn residual_matrix(record: &AttentionRecord, layer: usize) -> Vec<Vec<f64>> {
    let l = record.layout.len();
    let h = record.heads;
    (0..l)
        .map(|q| {
            let mut row: Vec<f64> = (0..l)
                .map(|k| {
                    let mean: f64 = (0..h).map(|hh| record.layers[layer][(hh * l + q) * l + k]).sum::<f64>() / h as f64;
                    0.5 * mean + if q == k { 0.5 } else { 0.0 }
                })
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect()
}

fn rollout_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let layouts = [
        TokenLayout { steps: 1, slots: 2, registers: 0 },
        TokenLayout { steps: 1, slots: 1, registers: 1 },
    ];
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let layout = layouts[trial % 2];
        let l = layout.len();
        let heads = rng.random_range(1..=3);
        let depth = rng.random_range(1..=4);
        let layers: Vec<Vec<f64>> = (0..depth)
            .map(|_| {
                let mut w = vec![0.0; heads * l * l];
                for row in w.chunks_mut(l) {
                    row.iter_mut().for_each(|v| *v = rng.random_range(0.01..1.0));
                    let s: f64 = row.iter().sum();
                    row.iter_mut().for_each(|v| *v /= s);
                }
                w
            })
            .collect();
        let record = AttentionRecord { layout, heads, layers };
        let got = attention_rollout(&record, 0).unwrap();
        // reverse association: e_q^T A_last ... A_first
        let q = layout.output_token(0);
        let mut v: Vec<f64> = (0..l).map(|i| if i == q { 1.0 } else { 0.0 }).collect();
        for layer in (0..depth).rev() {
            let a = residual_matrix(&record, layer);
            v = (0..l).map(|j| (0..l).map(|i| v[i] * a[i][j]).sum()).collect();
        }
        let slots: Vec<f64> = v[..layout.slots].to_vec();
        let total: f64 = slots.iter().sum();
        for (g, s) in got.values.iter().zip(&slots) {
            worst = worst.max((g - s / total).abs());
        }
    }
    Outcome::check(worst <= ROLLOUT_TOL, format!("max deviation from layer product {worst:.2e} on 200 toy records"))
}

fn determinism() -> Outcome {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::tiny(Task::ReachSpecific);
        cfg.seed = 11;
        cfg.out_dir = dir.path().to_path_buf();
        cfg.train.total_env_steps = 72;
        trainer::train::<f32>(cfg, None).unwrap();
        std::fs::read_to_string(dir.path().join(trainer::METRICS_FILE)).unwrap()
    };
    let (a, b) = (run(), run());
    let lines = a.lines().count();
    Outcome::check(a == b && lines > 0, format!("{lines} metric lines, identical: {}", a == b))
}

fn slot_mse(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let (x, y) = (a.to_f64_vec(), b.to_f64_vec());
    x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / x.len() as f64
}

/// SAVi pretraining plus 20k world-model updates on push-specific random play,
/// then open-loop and reconstruction quality on held-out episodes.
fn world_model_milestone() -> Outcome {
    let mut cfg = RunConfig::for_task(Task::PushSpecific);
    cfg.out_dir = std::env::temp_dir().join("slotrl-acceptance-wm");
    let mut t = Trainer::<f32>::with_log(cfg.clone(), MetricLog::in_memory()).unwrap();
    t.pretrain().unwrap();
    for _ in 0..t.config().train.replay_capacity {
        t.progress.episodes = 0;
        t.collect_episode().unwrap();
    }
    let window = cfg.train.window_len();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20_000 {
        let batch = t.replay.sample::<f32, _>(cfg.train.batch_size, window, &mut rng).unwrap();
        t.agent.world_model_update(&batch).unwrap();
    }
    let _g = no_grad();
    let agent = &t.agent;
    let s = cfg.train.seed_steps;
    let (mut one, mut ten, mut pix, mut count) = (0.0, 0.0, 0.0, 0.0);
    for seed in eval_seeds(cfg.seed ^ 0xACCE, 20) {
        let ep = run_episode(&t.env, seed, |_| Ok(Action::random(&mut rng))).unwrap();
        let video: Vec<Tensor<f32>> = ep.frames.iter().map(|f| frames_to_tensor(&[f]).unwrap()).collect();
        let slots = Tensor::stack(&agent.savi.encode_video(&video).unwrap(), 1);
        let acts: Vec<f32> = ep.actions[..s + 10].iter().flat_map(|a| a.0.map(|v| v as f32)).collect();
        let acts = Tensor::from_vec(acts, &[1, s + 10, 4]);
        let pred = agent.dynamics.rollout(&slots.narrow(1, 0, s), &acts, 10).unwrap();
        one += slot_mse(&pred.narrow(1, 0, 1), &slots.narrow(1, s, 1));
        ten += slot_mse(&pred.narrow(1, 9, 1), &slots.narrow(1, s + 9, 1));
        let n = agent.savi.num_slots();
        let dec = agent.savi.decode(&slots.reshape(&[ep.len(), n, agent.savi.slot_dim()])).unwrap();
        pix += slot_mse(&dec.composite, &Tensor::cat(&video, 0));
        count += 1.0;
    }
    let (one, ten, pix) = (one / count, ten / count, pix / count);
    let psnr = 10.0 * (1.0 / pix).log10();
    Outcome::check(
        ten <= OPEN_LOOP_RATIO * one && psnr >= MIN_PSNR_DB,
        format!("10-step MSE {ten:.4e} vs {OPEN_LOOP_RATIO} x 1-step {one:.4e}, PSNR {psnr:.2} dB"),
    )
}

/// Full-budget training on reach-specific (three seeds) and reach-distinct.
fn rl_milestone() -> Outcome {
    let train = |task: Task, seed: u64| {
        let mut cfg = RunConfig::for_task(task);
        cfg.seed = seed;
        let dir = std::env::temp_dir().join(format!("slotrl-acceptance-{}-{seed}", task.name()));
        cfg.out_dir = dir.clone();
        trainer::train::<f32>(cfg, None).unwrap();
        trainer::load_agent::<f32>(&dir).unwrap()
    };
    let score = |agent: &slotrl::agent::Agent<f32>, task: Task| {
        let world = BlockWorld::new(EnvConfig {
            task,
            ..agent.config.env.clone()
        })
        .unwrap();
        trainer::evaluate(agent, &world, &eval_seeds(1234, 100)).unwrap().success_mean()
    };
    let specific: Vec<_> = (0..3).map(|s| train(Task::ReachSpecific, s)).collect();
    let mean = specific.iter().map(|a| score(a, Task::ReachSpecific)).sum::<f64>() / 3.0;
    let baseline = score(&specific[0], Task::ReachDistinct);
    let distinct = score(&train(Task::ReachDistinct, 0), Task::ReachDistinct);
    Outcome::check(
        mean >= REACH_SUCCESS && distinct - baseline >= DISTINCT_MARGIN,
        format!("reach-specific {mean:.3} (need {REACH_SUCCESS}), reach-distinct {distinct:.3} vs baseline {baseline:.3}"),
    )
}

fn main() -> ExitCode {
    let full = std::env::args().any(|a| a == "--full") || std::env::var_os("SLOTRL_FULL_ACCEPTANCE").is_some();
    let secs = Duration::from_secs;
    let not_run = |why: &str| Outcome {
        status: Status::NotRun,
        detail: why.to_string(),
    };
    let heavy = "needs a multi-hour accelerator budget; pass --full to run";
    let criteria: Vec<(u32, &str, Box<dyn FnOnce() -> Outcome>)> = vec![
        (1, "scalar codec", Box::new(move || timed(secs(10), codec_suite))),
        (2, "lambda-return oracle", Box::new(move || timed(secs(10), lambda_suite))),
        (3, "equivariance and invariance", Box::new(move || timed(secs(60), equivariance_suite))),
        (4, "causality and mask predicate", Box::new(move || timed(secs(60), causality_suite))),
        (5, "environment formulas", Box::new(move || timed(secs(10), env_suite))),
        (
            6,
            "world-model learning milestone",
            Box::new(move || if full { timed(secs(6 * 3600), world_model_milestone) } else { not_run(heavy) }),
        ),
        (
            7,
            "RL milestone",
            Box::new(move || if full { timed(secs(16 * 3600), rl_milestone) } else { not_run(heavy) }),
        ),
        (8, "attention-rollout oracle", Box::new(move || timed(secs(10), rollout_oracle))),
        (9, "determinism", Box::new(move || timed(secs(600), determinism))),
    ];
    let mut failed = false;
    for (id, name, run) in criteria {
        let out = run();
        let tag = match out.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed = true;
                "FAIL"
            }
            Status::NotRun => "NOT RUN",
        };
        println!("criterion {id} {tag}: {name}: {}", out.detail);
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
