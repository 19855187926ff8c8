use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slotrl::codec::{symexp, symlog, BinSpec, ReturnNormalizer};
use slotrl::env::{Action, Episode};
use slotrl::heads::lambda_returns;
use slotrl::image::Frame;
use slotrl::replay::ReplayBuffer;
use slotrl::sat::{attention_bias, TokenLayout};
use slotrl::tensor::optim::LrSchedule;
use slotrl::viz::{attention_rollout, AttentionRecord};

fn episode(len: usize, tag: u8) -> Episode {
    let mut e = Episode::start(Frame::filled(4, [tag, 0, 0]));
    e.frames.extend((1..len).map(|t| Frame::filled(4, [tag, t as u8, 0])));
    e.rewards.extend((1..len).map(|t| t as f64));
    e.finish();
    e
}

proptest! {
    #[test]
    fn actions_are_clipped_into_the_unit_box(raw in prop::array::uniform4(-10.0f64..10.0)) {
        let a = Action::new(raw).unwrap();
        for (c, r) in a.0.iter().zip(raw) {
            prop_assert!(c.abs() <= 1.0);
            prop_assert!(r.abs() > 1.0 || *c == r);
        }
    }

    #[test]
    fn symlog_is_odd_and_increasing(x in -1e6f64..1e6, dx in 1e-3f64..10.0) {
        prop_assert_eq!(symlog(-x).unwrap(), -symlog(x).unwrap());
        prop_assert!(symlog(x + dx).unwrap() > symlog(x).unwrap());
        prop_assert!((symexp(symlog(x).unwrap()).unwrap() - x).abs() <= 1e-9 * x.abs().max(1.0));
    }

    #[test]
    fn twohot_is_a_distribution_on_adjacent_bins(y in -1e8f64..1e8, k in 3usize..300) {
        let bins = BinSpec::<f64>::new(k).unwrap();
        let w = bins.twohot(y).unwrap();
        let support: Vec<usize> = (0..k).filter(|&i| w[i] != 0.0).collect();
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(support.len() <= 2);
        if support.len() == 2 {
            prop_assert_eq!(support[1], support[0] + 1);
        }
    }

    #[test]
    fn lambda_returns_stay_in_discounted_bounds(
        (r, v) in (0usize..12).prop_flat_map(|t| (
            prop::collection::vec(0.0f64..1.0, t),
            prop::collection::vec(0.0f64..100.0, t + 1),
        )),
        gamma in 0.0f64..0.99,
        lambda in 0.0f64..=1.0,
        scale in -5.0f64..5.0,
    ) {
        let hi = (1.0 / (1.0 - gamma)).max(100.0);
        let g = lambda_returns(&r, &v, gamma, lambda).unwrap();
        prop_assert!(g.iter().all(|&x| (0.0..=hi + 1e-9).contains(&x)));
        let rs: Vec<f64> = r.iter().map(|x| x * scale).collect();
        let vs: Vec<f64> = v.iter().map(|x| x * scale).collect();
        let gs = lambda_returns(&rs, &vs, gamma, lambda).unwrap();
        for (a, b) in g.iter().zip(&gs) {
            prop_assert!((a * scale - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn mask_allows_earlier_slots_and_own_step_only(
        steps in 1usize..6, slots in 1usize..6, registers in 0usize..4, heads in 1usize..5,
    ) {
        let layout = TokenLayout { steps, slots, registers };
        let l = layout.len();
        let bias = attention_bias::<f64>(&layout, heads).to_vec();
        let per = slots + registers + 1;
        for q in 0..l {
            for k in 0..l {
                let allowed = k / per <= q / per && (k % per < slots || k / per == q / per);
                prop_assert_eq!(bias[q * l + k].is_finite(), allowed);
            }
        }
    }

    #[test]
    fn replay_windows_stay_inside_one_episode(
        lens in prop::collection::vec(1usize..20, 1..8), capacity in 1usize..6, len in 1usize..10, seed: u64,
    ) {
        let mut buffer = ReplayBuffer::new(capacity);
        for (i, &n) in lens.iter().enumerate() {
            buffer.push(episode(n, i as u8));
        }
        prop_assert_eq!(buffer.len(), lens.len().min(capacity));
        let kept = &lens[lens.len() - buffer.len()..];
        let expected: usize = kept.iter().map(|&n| (n + 1).saturating_sub(len)).sum();
        prop_assert_eq!(buffer.num_windows(len), expected);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if expected == 0 {
            prop_assert!(buffer.sample_index(len, &mut rng).is_err());
        } else {
            for _ in 0..20 {
                let w = buffer.sample_index(len, &mut rng).unwrap();
                prop_assert!(w.start + len <= kept[w.episode]);
            }
            let batch = buffer.sample::<f64, _>(3, len, &mut rng).unwrap();
            for (b, w) in batch.index.iter().enumerate() {
                for t in 0..len {
                    prop_assert_eq!(batch.rewards.to_vec()[b * len + t], (w.start + t) as f64);
                }
            }
        }
    }

    #[test]
    fn schedule_follows_warmup_then_cosine(base in 1e-6f64..1.0, warmup in 1u64..1000, extra in 1u64..10_000, step in 0u64..20_000) {
        let s = LrSchedule { base, warmup_steps: warmup, total_steps: Some(warmup + extra) };
        let lr = s.at(step);
        prop_assert!((0.0..=base * (1.0 + 1e-12)).contains(&lr));
        let expect = if step < warmup {
            base * step as f64 / warmup as f64
        } else {
            let p = ((step - warmup) as f64 / extra as f64).min(1.0);
            0.5 * base * (1.0 + (std::f64::consts::PI * p).cos())
        };
        prop_assert!((lr - expect).abs() <= 1e-12 * base);
        prop_assert!(s.at(step + 1) >= lr || step >= warmup);
    }

    #[test]
    fn normalizer_range_ignores_offsets_and_scale_floors_at_one(
        returns in prop::collection::vec(-50.0f64..50.0, 1..64), shift in -100.0f64..100.0,
    ) {
        let mut a = ReturnNormalizer::new(0.99);
        let mut b = ReturnNormalizer::new(0.99);
        let ra = a.update(&returns).unwrap();
        let shifted: Vec<f64> = returns.iter().map(|r| r + shift).collect();
        let rb = b.update(&shifted).unwrap();
        prop_assert!(ra >= 0.0);
        prop_assert!((ra - rb).abs() < 1e-9);
        prop_assert!(a.scale() >= 1.0);
        prop_assert_eq!(a.scale(), ra.max(1.0));
    }

    #[test]
    fn rollout_relevance_is_a_distribution_over_slots(
        steps in 1usize..4, slots in 1usize..4, registers in 0usize..3, heads in 1usize..3, depth in 1usize..4, seed: u64,
    ) {
        use rand::Rng;
        let layout = TokenLayout { steps, slots, registers };
        let l = layout.len();
        let bias = attention_bias::<f64>(&layout, 1).to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<Vec<f64>> = (0..depth).map(|_| {
            let mut w = vec![0.0; heads * l * l];
            for (i, row) in w.chunks_mut(l).enumerate() {
                let q = i % l;
                for (k, v) in row.iter_mut().enumerate() {
                    *v = if bias[q * l + k].is_finite() { rng.random_range(0.01..1.0) } else { 0.0 };
                }
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
            w
        }).collect();
        let record = AttentionRecord { layout, heads, layers };
        prop_assert!(record.max_row_error() < 1e-12);
        let target = steps - 1;
        let rel = attention_rollout(&record, target).unwrap();
        prop_assert!(rel.values.iter().all(|&v| v >= 0.0));
        prop_assert!((rel.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
