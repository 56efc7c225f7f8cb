use constrained_rep::algo::{evaluate, train, train_with, TrainConfig};
use constrained_rep::envs::{make_env, ENV_NAMES};
use constrained_rep::nn::Checkpoint;
use constrained_rep::theory::{tabular_convex_q, value_iteration, FiniteMdp, StepSchedule, TabularConfig};
use constrained_rep::{Error, TrainState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(env: &str) -> TrainConfig {
    TrainConfig {
        env: env.into(),
        hidden: 16,
        actor_hidden: vec![16],
        batch_size: 16,
        warmup: 100,
        steps: 300,
        eval_every: 100,
        eval_episodes: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn every_env_truncates_at_its_horizon() {
    for name in ENV_NAMES {
        let mut env = make_env(name, 0).unwrap();
        let spec = env.spec().clone();
        let obs = env.reset();
        assert_eq!(obs.len(), spec.obs_dim);
        let zero = vec![0.0; spec.act_dim];
        for t in 1..=spec.horizon {
            let out = env.step(&zero).unwrap();
            assert!(!out.terminal);
            assert_eq!(out.truncated, t == spec.horizon, "{name} at {t}");
            assert!(out.reward.is_finite());
        }
        assert!(env.step(&zero).is_err(), "{name} stepped past its horizon");
    }
}

#[test]
fn same_seed_same_episode() {
    for name in ENV_NAMES {
        let (mut a, mut b) = (make_env(name, 5).unwrap(), make_env(name, 5).unwrap());
        assert_eq!(a.reset(), b.reset());
        let act = vec![0.3; a.spec().act_dim];
        for _ in 0..20 {
            assert_eq!(a.step(&act).unwrap(), b.step(&act).unwrap());
        }
    }
}

#[test]
fn out_of_box_actions_are_clamped_and_counted() {
    let mut env = make_env("pointmass", 0).unwrap();
    env.reset();
    env.step(&[5.0, 0.0]).unwrap();
    env.step(&[0.5, -0.5]).unwrap();
    assert_eq!(env.clamp_warnings(), 1);
    assert!(matches!(env.step(&[f64::NAN, 0.0]), Err(Error::InvalidInput(_))));
}

#[test]
fn trained_state_survives_a_checkpoint() {
    let cfg = tiny("pointmass");
    let out = train(&cfg).unwrap();
    let mut ck = Checkpoint::new();
    ck.insert("actor", &out.state.actor.params);
    ck.insert("critic1", &out.state.critics[0].params);
    let json = ck.to_json().unwrap();

    let mut fresh = TrainState::new(&TrainConfig { seed: 99, ..cfg.clone() }, 6, 2).unwrap();
    let back = Checkpoint::from_json(&json).unwrap();
    back.restore("actor", &mut fresh.actor.params).unwrap();
    back.restore("critic1", &mut fresh.critics[0].params).unwrap();
    assert!(fresh.actor.params.bit_eq(&out.state.actor.params));
    assert!(fresh.critics[0].params.bit_eq(&out.state.critics[0].params));

    let mut e1 = make_env("pointmass", 7).unwrap();
    let mut e2 = make_env("pointmass", 7).unwrap();
    let r1 = evaluate(&out.state.actor, e1.as_mut(), 2).unwrap();
    let r2 = evaluate(&fresh.actor, e2.as_mut(), 2).unwrap();
    assert_eq!(r1.to_bits(), r2.to_bits());
}

#[test]
fn single_precision_training_runs() {
    let cfg = tiny("pendulum");
    let out = train_with::<f32>(&cfg, |_| Ok(())).unwrap();
    assert_eq!(out.curve.len(), 4);
    assert!(out.curve.iter().all(|p| p.eval_return.is_finite()));
    assert_eq!(out.summary.critic_updates, 400);
}

#[test]
fn eval_callback_errors_abort_training() {
    let cfg = tiny("pointmass");
    let res = train_with::<f64>(&cfg, |p| {
        if p.env_step == 100 {
            Err(Error::InvalidInput("stop".into()))
        } else {
            Ok(())
        }
    });
    assert!(res.is_err());
}

#[test]
fn both_tables_agree_with_value_iteration_on_a_small_mdp() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mdp = FiniteMdp::random(3, 2, 0.5, &mut rng);
    let q_star = value_iteration(&mdp, 1e-12);
    let cfg = TabularConfig {
        lambda: 0.5,
        schedule: StepSchedule::Harmonic { a: 2.0, b: 4.0 },
        epsilon: 0.3,
        steps: 1_000_000,
        init: 1.0,
    };
    let run = tabular_convex_q(&mdp, &cfg, &q_star, &mut rng).unwrap();
    assert!(run.error_a(&q_star) < 1e-2, "{}", run.error_a(&q_star));
    assert!(run.error_b(&q_star) < 1e-2);
}
