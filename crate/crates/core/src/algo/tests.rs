use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Tape;
use crate::replay::{Batch, ReplayBuffer, Transition};

fn small_config() -> TrainConfig {
    TrainConfig {
        env: "pointmass".into(),
        hidden: 16,
        depth: 2,
        actor_hidden: vec![16],
        batch_size: 8,
        warmup: 50,
        steps: 150,
        eval_every: 50,
        eval_episodes: 1,
        ..TrainConfig::default()
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, obs: usize, act: usize) -> Batch<f64> {
    let mut u = |r, c| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
    Batch {
        s: u(n, obs),
        a: u(n, act),
        r: u(n, 1),
        s2: u(n, obs),
        done: Array2::from_shape_fn((n, 1), |(i, _)| if i % 5 == 0 { 1.0 } else { 0.0 }),
    }
}

fn values(q1: Array2<f64>, q2: Array2<f64>, log_prob: Array2<f64>) -> TargetValues<f64> {
    TargetValues { q1, q2, log_prob }
}

#[test]
fn convex_target_matches_hand_evaluation() {
    let r = array![[1.0], [-0.5], [0.25]];
    let done = array![[0.0], [1.0], [0.0]];
    let v = values(
        array![[2.0], [3.0], [-1.0]],
        array![[4.0], [-2.0], [-3.0]],
        array![[-0.7], [0.1], [1.3]],
    );
    let y = convex_target_from_values(&r, &done, &v, 0.2, 0.9, 0.3, true);
    // row 0: mix = 0.3*2 + 0.7*4 = 3.4, 1 + 0.9*(3.4 + 0.14)
    // row 1: terminal, y = r
    // row 2: mix = 0.3*(-3) + 0.7*(-1) = -1.6, 0.25 + 0.9*(-1.6 - 0.26)
    let hand = [1.0 + 0.9 * (3.4 + 0.14), -0.5, 0.25 + 0.9 * (-1.6 - 0.26)];
    for (g, h) in y.iter().zip(hand) {
        assert!((g - h).abs() < 1e-12, "{g} vs {h}");
    }
    let no_ent = convex_target_from_values(&r, &done, &v, 0.2, 0.9, 0.3, false);
    assert!((no_ent[[0, 0]] - (1.0 + 0.9 * 3.4)).abs() < 1e-12);
}

#[test]
fn lambda_one_is_clipped_double_q_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let b = random_batch(&mut rng, 32, 3, 1);
        let mut u = |_| Array2::from_shape_fn((32, 1), |_| rng.random_range(-5.0..5.0));
        let v = values(u(0), u(1), u(2));
        let a = convex_target_from_values(&b.r, &b.done, &v, 0.37, 0.99, 1.0, true);
        let c = cdq_target(&b.r, &b.done, &v, 0.37, 0.99, true);
        assert!(a.iter().zip(c.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn equal_critics_make_lambda_irrelevant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = random_batch(&mut rng, 16, 3, 1);
    let q = Array2::from_shape_fn((16, 1), |_| rng.random_range(-5.0..5.0));
    let lp = Array2::from_shape_fn((16, 1), |_| rng.random_range(-2.0..2.0));
    let v = values(q.clone(), q, lp);
    let base = convex_target_from_values(&b.r, &b.done, &v, 0.1, 0.99, 0.0, true);
    for lambda in [0.3, 0.7, 1.0] {
        let y = convex_target_from_values(&b.r, &b.done, &v, 0.1, 0.99, lambda, true);
        assert!((&y - &base).iter().all(|d| d.abs() < 1e-12));
    }
}

#[test]
fn target_is_monotone_in_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let b = random_batch(&mut rng, 8, 2, 1);
        let mut u = |_| Array2::from_shape_fn((8, 1), |_| rng.random_range(-5.0..5.0));
        let v = values(u(0), u(1), u(2));
        let l1 = rng.random_range(0.0..1.0);
        let l2 = rng.random_range(l1..=1.0);
        let y1 = convex_target_from_values(&b.r, &b.done, &v, 0.2, 0.99, l1, true);
        let y2 = convex_target_from_values(&b.r, &b.done, &v, 0.2, 0.99, l2, true);
        assert!(y1.iter().zip(y2.iter()).all(|(a, b)| a >= b));
    }
}

#[test]
fn targets_start_as_copies() {
    let cfg = small_config();
    let st = TrainState::<f64>::new(&cfg, 6, 2).unwrap();
    for i in 0..2 {
        assert!(st.targets[i].params.bit_eq(&st.critics[i].params));
    }
    assert!(!st.critics[0].params.bit_eq(&st.critics[1].params));
    assert_eq!(st.alpha(), 1.0);
    assert_eq!(st.target_entropy, -2.0);
}

#[test]
fn critic_update_at_zero_residual_is_a_no_op() {
    let cfg = small_config();
    let mut st = TrainState::<f64>::new(&cfg, 6, 2).unwrap();
    let b = random_batch(&mut ChaCha8Rng::seed_from_u64(3), 1, 6, 2);
    let y = st.critics[0].evaluate(&b.s, &b.a).unwrap();
    // make both critics agree so one target zeroes both residuals
    let c0 = st.critics[0].params.clone();
    st.critics[1].params.copy_from(&c0).unwrap();
    let before = st.critics.clone();
    let stats = st.critic_update(&b, &y, &cfg).unwrap();
    assert_eq!(stats.loss, [0.0, 0.0]);
    for (now, was) in st.critics.iter().zip(&before) {
        assert!(now.params.bit_eq(&was.params));
    }
    assert_eq!(st.critic_steps(), 1);
}

#[test]
fn critic_loss_is_the_hand_mse() {
    let cfg = small_config();
    let mut st = TrainState::<f64>::new(&cfg, 6, 2).unwrap();
    let b = random_batch(&mut ChaCha8Rng::seed_from_u64(4), 1, 6, 2);
    let q1 = st.critics[0].evaluate(&b.s, &b.a).unwrap()[[0, 0]];
    let q2 = st.critics[1].evaluate(&b.s, &b.a).unwrap()[[0, 0]];
    let y = array![[0.75]];
    let stats = st.critic_update(&b, &y, &cfg).unwrap();
    assert!((stats.loss[0] - (q1 - 0.75).powi(2)).abs() < 1e-15);
    assert!((stats.loss[1] - (q2 - 0.75).powi(2)).abs() < 1e-15);
    assert!((stats.q_mean - 0.5 * (q1 + q2)).abs() < 1e-15);
}

#[test]
fn critic_loss_decreases_on_a_fixed_batch() {
    let cfg = small_config();
    let mut st = TrainState::<f64>::new(&cfg, 6, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = random_batch(&mut rng, 32, 6, 2);
    let y = Array2::from_shape_fn((32, 1), |_| rng.random_range(-1.0..1.0));
    let first = st.critic_update(&b, &y, &cfg).unwrap().loss;
    let mut last = first;
    for _ in 0..99 {
        last = st.critic_update(&b, &y, &cfg).unwrap().loss;
    }
    assert!(last[0] < first[0] && last[1] < first[1], "{first:?} -> {last:?}");
}

#[test]
fn detached_target_leaves_no_gradient_on_targets_or_actor() {
    let cfg = small_config();
    let st = TrainState::<f64>::new(&cfg, 6, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b = random_batch(&mut rng, 8, 6, 2);
    let noise = Array2::from_shape_fn((8, 2), |_| rng.random_range(-1.0..1.0));

    let mut tape = Tape::new();
    let actor = st.actor.bind(&mut tape, true);
    let t1 = st.targets[0].bind(&mut tape, true);
    let t2 = st.targets[1].bind(&mut tape, true);
    let c1 = st.critics[0].bind(&mut tape, true);
    let s2 = tape.constant(b.s2.clone());
    let p = st.actor.sample(&mut tape, &actor, s2, &noise).unwrap();
    let o2 = tape.concat_cols(s2, p.action).unwrap();
    let q1 = st.targets[0].forward(&mut tape, &t1, o2).unwrap();
    let q2 = st.targets[1].forward(&mut tape, &t2, o2).unwrap();
    let bootstrap = tape.add(q1, q2).unwrap();
    let y = tape.detach(bootstrap);

    let s = tape.constant(b.s.clone());
    let a = tape.constant(b.a.clone());
    let o = tape.concat_cols(s, a).unwrap();
    let q = st.critics[0].forward(&mut tape, &c1, o).unwrap();
    let err = tape.sub(q, y).unwrap();
    let sq = tape.square(err);
    let loss = tape.mean(sq);
    tape.backward(loss).unwrap();
    for v in actor.iter().chain(&t1).chain(&t2) {
        assert!(tape.grad_or_zeros(*v).iter().all(|&g| g == 0.0));
    }
    assert!(c1.iter().any(|v| tape.grad_or_zeros(*v).iter().any(|&g| g != 0.0)));

    // the production path never builds a graph through the target at all
    let y_prod = st.convex_q_target(&b, &noise, &cfg).unwrap();
    assert!(y_prod.iter().all(|v| v.is_finite()));
}

#[test]
fn flat_critic_and_zero_alpha_give_no_actor_gradient() {
    let cfg = small_config();
    let mut st = TrainState::<f64>::new(&cfg, 6, 2).unwrap();
    // Q ignores the action: zero the action columns of the first layer
    for c in &mut st.critics {
        let (w, _) = c.first_layer();
        c.params.get_mut(w).slice_mut(ndarray::s![.., 6..]).fill(0.0);
    }
    st.log_alpha.values_mut()[0].fill(f64::NEG_INFINITY);
    assert_eq!(st.alpha(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let b = random_batch(&mut rng, 8, 6, 2);
    let noise = Array2::from_shape_fn((8, 2), |_| rng.random_range(-1.0..1.0));
    let before = st.actor.params.clone();
    st.actor_update(&b, &noise, &cfg).unwrap();
    assert!(st.actor.params.bit_eq(&before));
}

#[test]
fn temperature_follows_the_entropy_error() {
    let cfg = small_config();
    let mut st = TrainState::<f64>::new(&cfg, 6, 2).unwrap();
    // target entropy -2: log_pi = 2 puts the entropy exactly on target
    let at = st.temperature_update(&Array2::from_elem((4, 1), 2.0), &cfg).unwrap();
    assert_eq!(at, 1.0);
    let above = st.temperature_update(&Array2::from_elem((4, 1), -3.0), &cfg).unwrap();
    assert!(above < 1.0);
    let mut st = TrainState::<f64>::new(&cfg, 6, 2).unwrap();
    let below = st.temperature_update(&Array2::from_elem((4, 1), 5.0), &cfg).unwrap();
    assert!(below > 1.0);
}

#[test]
fn polyak_with_tau_one_copies() {
    let cfg = small_config();
    let mut st = TrainState::<f64>::new(&cfg, 6, 2).unwrap();
    let b = random_batch(&mut ChaCha8Rng::seed_from_u64(8), 8, 6, 2);
    st.critic_update(&b, &Array2::ones((8, 1)), &cfg).unwrap();
    assert!(!st.targets[0].params.bit_eq(&st.critics[0].params));
    let mut half = st.clone();
    half.polyak(0.005).unwrap();
    assert!(!half.targets[0].params.bit_eq(&st.targets[0].params));
    st.polyak(1.0).unwrap();
    assert!(st.targets[0].params.bit_eq(&st.critics[0].params));
    let frozen = st.targets.clone();
    st.polyak(0.005).unwrap();
    assert!(st.targets[1].params.bit_eq(&frozen[1].params));
}

fn filled_buffer(n: usize) -> ReplayBuffer<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut buf = ReplayBuffer::new(100, 6, 2).unwrap();
    for _ in 0..n {
        let mut u = |k| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        buf.add(Transition {
            s: u(6),
            a: u(2),
            r: u(1)[0],
            s2: u(6),
            done: false,
        })
        .unwrap();
    }
    buf
}

#[test]
fn smr_runs_m_updates_per_call() {
    for m in [1, 2, 3] {
        let cfg = TrainConfig { smr: m, ..small_config() };
        let mut st = TrainState::<f64>::new(&cfg, 6, 2).unwrap();
        let buf = filled_buffer(20);
        for k in 1..=3 {
            let metrics = st.smr_train_step(&buf, &cfg).unwrap();
            assert!(!metrics.skipped);
            assert_eq!(st.critic_steps(), (m * k) as u64);
            assert_eq!(st.critic_opts[1].step_count, (m * k) as u64);
            assert_eq!(st.actor_steps(), (m * k) as u64);
            assert_eq!(st.alpha_opt.step_count, (m * k) as u64);
        }
    }
}

#[test]
fn smr_skips_on_empty_buffer() {
    let cfg = small_config();
    let mut st = TrainState::<f64>::new(&cfg, 6, 2).unwrap();
    let m = st.smr_train_step(&filled_buffer(0), &cfg).unwrap();
    assert!(m.skipped);
    assert_eq!(st.critic_steps(), 0);
}

#[test]
fn frozen_target_noise_is_reused() {
    let cfg = TrainConfig {
        freeze_target_noise: true,
        ..small_config()
    };
    let free = small_config();
    let buf = filled_buffer(20);
    let mut a = TrainState::<f64>::new(&cfg, 6, 2).unwrap();
    let mut b = TrainState::<f64>::new(&free, 6, 2).unwrap();
    a.smr_train_step(&buf, &cfg).unwrap();
    b.smr_train_step(&buf, &free).unwrap();
    assert!(!a.critics[0].params.bit_eq(&b.critics[0].params));
}

#[test]
fn zero_steps_gives_only_the_initial_evaluation() {
    let cfg = TrainConfig { steps: 0, ..small_config() };
    let out = train(&cfg).unwrap();
    assert_eq!(out.curve.len(), 1);
    assert_eq!(out.curve[0].env_step, 0);
    assert!(out.curve[0].critic_loss.is_none());
}

#[test]
fn update_counters_follow_smr_accounting() {
    let cfg = small_config();
    let out = train(&cfg).unwrap();
    let expected = (cfg.smr * (cfg.steps - cfg.warmup)) as u64;
    assert_eq!(out.summary.critic_updates, expected);
    assert_eq!(out.summary.actor_updates, expected);
    assert_eq!(
        out.curve.iter().map(|p| p.env_step).collect::<Vec<_>>(),
        vec![0, 50, 100, 150]
    );
    assert!(out.curve[1].critic_loss.is_none());
    assert!(out.curve[2].critic_loss.is_some());
}

#[test]
fn identical_seeds_are_bitwise_reproducible() {
    let cfg = small_config();
    let a = train(&cfg).unwrap();
    let b = train(&cfg).unwrap();
    assert_eq!(curve_to_csv(&a.curve), curve_to_csv(&b.curve));
    assert!(a.state.actor.params.bit_eq(&b.state.actor.params));
    assert!(a.state.critics[1].params.bit_eq(&b.state.critics[1].params));
    let other = train(&TrainConfig { seed: 1, ..cfg }).unwrap();
    assert!(!other.state.actor.params.bit_eq(&a.state.actor.params));
}

#[test]
fn csv_has_the_documented_header() {
    let out = train(&TrainConfig { steps: 60, ..small_config() }).unwrap();
    let csv = curve_to_csv(&out.curve);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER);
    assert_eq!(lines.next().unwrap().split(',').count(), 6);
    assert!(csv.ends_with('\n') && !csv.contains('\r'));
}
