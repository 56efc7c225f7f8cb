use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{SmrMetrics, TrainConfig, TrainState};
use crate::envs::{make_env, Env};
use crate::error::{Error, Result};
use crate::nn::ActorNet;
use crate::replay::{ReplayBuffer, Transition};
use crate::scalar::Scalar;

pub const CSV_HEADER: &str = "env_step,eval_return,critic_loss,actor_loss,alpha,q_mean";

/// One evaluation of the deterministic policy. Training metrics are `None`
/// before the first update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub env_step: usize,
    pub eval_return: f64,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub q_mean: Option<f64>,
}

impl CurvePoint {
    /// CSV row matching [`CSV_HEADER`]; missing metrics are empty fields.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        format!(
            "{},{:?},{},{},{},{}",
            self.env_step,
            self.eval_return,
            opt(self.critic_loss),
            opt(self.actor_loss),
            opt(self.alpha),
            opt(self.q_mean)
        )
    }
}

pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in curve {
        let _ = writeln!(out, "{}", p.csv_row());
    }
    out
}

/// JSON run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// `key = value` echo of the configuration.
    pub config: String,
    pub seed: u64,
    pub env: String,
    pub final_return: f64,
    pub wall_time_s: f64,
    pub env_steps: usize,
    pub episodes: usize,
    pub critic_updates: u64,
    pub actor_updates: u64,
    pub skipped_updates: u64,
    pub clamped_actions: u64,
}

pub struct TrainOutcome<T: Scalar> {
    pub curve: Vec<CurvePoint>,
    pub state: TrainState<T>,
    pub summary: RunSummary,
}

/// Mean undiscounted return of `tanh(mean)` over `episodes` episodes.
pub fn evaluate<T: Scalar>(actor: &ActorNet<T>, env: &mut dyn Env, episodes: usize) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset();
        loop {
            let s = Array2::from_shape_fn((1, obs.len()), |(_, j)| T::of(obs[j]));
            let a: Vec<f64> = actor.act(&s, None)?.iter().map(|v| v.to_f64()).collect();
            let out = env.step(&a)?;
            total += out.reward;
            if out.done() {
                break;
            }
            obs = out.obs;
        }
    }
    Ok(total / episodes.max(1) as f64)
}

/// Mean return of uniformly random actions.
pub fn random_policy_return(env_name: &str, episodes: usize, seed: u64) -> Result<f64> {
    let mut env = make_env(env_name, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = env.spec().act_dim;
    let mut total = 0.0;
    for _ in 0..episodes {
        env.reset();
        loop {
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let out = env.step(&a)?;
            total += out.reward;
            if out.done() {
                break;
            }
        }
    }
    Ok(total / episodes.max(1) as f64)
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome<f64>> {
    train_with(cfg, |_| Ok(()))
}

/// Full run: uniform warmup, then one environment step and one SMR step per
/// iteration, evaluating every `cfg.eval_every` steps. `on_eval` sees each
/// curve point as soon as it exists.
pub fn train_with<T: Scalar>(
    cfg: &TrainConfig,
    mut on_eval: impl FnMut(&CurvePoint) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let started = Instant::now();
    let mut env = make_env(&cfg.env, cfg.seed.wrapping_mul(2).wrapping_add(1))?;
    let mut eval_env = make_env(&cfg.env, cfg.seed.wrapping_mul(2).wrapping_add(2))?;
    let (obs_dim, act_dim) = (env.spec().obs_dim, env.spec().act_dim);
    let mut state = TrainState::<T>::new(cfg, obs_dim, act_dim)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_size, obs_dim, act_dim)?;
    let mut explore = ChaCha8Rng::seed_from_u64(cfg.seed);
    explore.set_stream(2);

    let mut curve = Vec::new();
    let first = CurvePoint {
        env_step: 0,
        eval_return: evaluate(&state.actor, eval_env.as_mut(), cfg.eval_episodes)?,
        critic_loss: None,
        actor_loss: None,
        alpha: None,
        q_mean: None,
    };
    on_eval(&first)?;
    curve.push(first);

    let to_t = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
    let mut obs = env.reset();
    let mut last: Option<SmrMetrics> = None;
    let mut episodes = 0;
    let mut skipped = 0;
    for step in 1..=cfg.steps {
        let action: Vec<f64> = if step <= cfg.warmup {
            (0..act_dim).map(|_| explore.random_range(-1.0..=1.0)).collect()
        } else {
            let s = Array2::from_shape_fn((1, obs_dim), |(_, j)| T::of(obs[j]));
            let noise = Array2::from_shape_fn((1, act_dim), |_| {
                let v: f64 = StandardNormal.sample(&mut explore);
                T::of(v)
            });
            state.actor.act(&s, Some(&noise))?.iter().map(|v| v.to_f64()).collect()
        };
        let out = env.step(&action).map_err(|e| Error::Env {
            step,
            source: Box::new(e),
        })?;
        buffer.add(Transition {
            s: to_t(&obs),
            a: to_t(&action),
            r: T::of(out.reward),
            s2: to_t(&out.obs),
            done: out.terminal,
        })?;
        obs = if out.done() {
            episodes += 1;
            env.reset()
        } else {
            out.obs
        };

        if step > cfg.warmup {
            let m = state.smr_train_step(&buffer, cfg)?;
            if m.skipped {
                skipped += 1;
            } else {
                last = Some(m);
            }
        }

        if step % cfg.eval_every == 0 {
            let point = CurvePoint {
                env_step: step,
                eval_return: evaluate(&state.actor, eval_env.as_mut(), cfg.eval_episodes)
                    .map_err(|e| Error::Env {
                        step,
                        source: Box::new(e),
                    })?,
                critic_loss: last.map(|m| m.critic_loss),
                actor_loss: last.map(|m| m.actor_loss),
                alpha: last.map(|m| m.alpha),
                q_mean: last.map(|m| m.q_mean),
            };
            on_eval(&point)?;
            curve.push(point);
        }
    }

    let summary = RunSummary {
        config: cfg.to_kv_string(),
        seed: cfg.seed,
        env: cfg.env.clone(),
        final_return: curve.last().map_or(f64::NAN, |p| p.eval_return),
        wall_time_s: started.elapsed().as_secs_f64(),
        env_steps: cfg.steps,
        episodes,
        critic_updates: state.critic_steps(),
        actor_updates: state.actor_steps(),
        skipped_updates: skipped,
        clamped_actions: env.clamp_warnings(),
    };
    Ok(TrainOutcome {
        curve,
        state,
        summary,
    })
}
