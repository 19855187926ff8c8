use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slotrl::agent::Agent;
use slotrl::config::RunConfig;
use slotrl::env::{Action, BlockWorld, Task};
use slotrl::replay::ReplayBuffer;
use slotrl::savi::Savi;
use slotrl::trainer::pretrain_savi;

fn tiny(task: Task) -> RunConfig {
    let mut cfg = RunConfig::tiny(task);
    cfg.train.warmup_steps = 0;
    cfg.train.lr_dynamics = 1e-3;
    cfg.train.lr_reward = 1e-3;
    cfg.train.lr_critic = 1e-3;
    cfg.train.lr_savi_finetune = 1e-3;
    cfg
}

#[test]
fn repeated_world_model_updates_fit_a_fixed_batch() {
    let cfg = tiny(Task::PushSpecific);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut agent = Agent::<f32>::new(cfg.clone(), &mut rng).unwrap();
    let world = BlockWorld::new(cfg.env.clone()).unwrap();
    let mut replay = ReplayBuffer::new(2);
    for seed in 0..2 {
        replay.push(world.rollout(seed, |_, _| Action::random(&mut rng)).unwrap());
    }
    let batch = replay.sample(2, cfg.train.window_len(), &mut rng).unwrap();
    let (first, _) = agent.world_model_update(&batch).unwrap();
    let mut last = first.clone();
    for _ in 0..40 {
        last = agent.world_model_update(&batch).unwrap().0;
    }
    assert!(last.savi_loss < first.savi_loss, "{} -> {}", first.savi_loss, last.savi_loss);
    assert!(last.reward_loss < first.reward_loss, "{} -> {}", first.reward_loss, last.reward_loss);
    assert!(last.dynamics_loss.is_finite());
}

#[test]
fn behavior_updates_reduce_critic_loss_on_fixed_slots() {
    let mut cfg = tiny(Task::ReachSpecific);
    cfg.train.lr_actor = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut agent = Agent::<f32>::new(cfg.clone(), &mut rng).unwrap();
    let world = BlockWorld::new(cfg.env.clone()).unwrap();
    let mut replay = ReplayBuffer::new(2);
    for seed in 0..2 {
        replay.push(world.rollout(seed, |_, _| Action::random(&mut rng)).unwrap());
    }
    let batch = replay.sample(2, cfg.train.window_len(), &mut rng).unwrap();
    let (_, slots) = agent.world_model_update(&batch).unwrap();
    let losses: Vec<f64> = (0..100)
        .map(|i| {
            let mut fixed = ChaCha8Rng::seed_from_u64(1000 + i % 4);
            agent.behavior_update(&slots, &batch.actions, &mut fixed).unwrap().0.critic_loss
        })
        .collect();
    let head: f64 = losses[..4].iter().sum::<f64>() / 4.0;
    let tail: f64 = losses[96..].iter().sum::<f64>() / 4.0;
    assert!(tail < 0.7 * head, "critic loss {head} -> {tail}");
}

#[test]
fn savi_pretraining_lowers_probe_reconstruction() {
    let mut cfg = RunConfig::tiny(Task::PushSpecific);
    cfg.train.pretrain_steps = 150;
    cfg.train.warmup_steps = 10;
    cfg.train.lr_savi_pretrain = 2e-3;
    cfg.train.clip_savi = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let savi = Savi::<f32>::new(cfg.savi.clone(), &mut rng).unwrap();
    let world = BlockWorld::new(cfg.env.clone()).unwrap();
    let report = pretrain_savi(&savi, &world, &cfg.train, &mut rng, None).unwrap();
    assert_eq!(report.losses.len(), 150);
    assert!(report.final_loss < 0.5 * report.initial_loss, "{} -> {}", report.initial_loss, report.final_loss);
}
