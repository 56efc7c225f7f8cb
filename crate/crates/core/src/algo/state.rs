use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::TrainConfig;
use crate::autodiff::{AdamState, Tape};
use crate::error::{Error, Result};
use crate::nn::{ActorConfig, ActorNet, CriticConfig, CriticNet, ParamStore};
use crate::replay::{Batch, ReplayBuffer};
use crate::scalar::Scalar;

/// Networks, optimizers and the sampling RNG of one run.
#[derive(Debug, Clone)]
pub struct TrainState<T: Scalar> {
    pub critics: [CriticNet<T>; 2],
    pub targets: [CriticNet<T>; 2],
    pub actor: ActorNet<T>,
    /// Single `1 x 1` tensor named `log_alpha`.
    pub log_alpha: ParamStore<T>,
    pub critic_opts: [AdamState<T>; 2],
    pub actor_opt: AdamState<T>,
    pub alpha_opt: AdamState<T>,
    pub target_entropy: T,
    pub rng: ChaCha8Rng,
}

/// Bootstrap inputs evaluated at `(s', a')`.
#[derive(Debug, Clone)]
pub struct TargetValues<T> {
    pub q1: Array2<T>,
    pub q2: Array2<T>,
    pub log_prob: Array2<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct CriticStats<T> {
    /// Pre-step mean squared errors.
    pub loss: [T; 2],
    /// Mean of both critics' predictions on the batch.
    pub q_mean: T,
}

#[derive(Debug, Clone)]
pub struct ActorStats<T> {
    pub loss: T,
    /// `B x 1` log-probabilities of the fresh actions, detached.
    pub log_prob: Array2<T>,
}

/// Metrics of one [`TrainState::smr_train_step`], taken from its last inner iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SmrMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub q_mean: f64,
    /// The buffer was empty and nothing was updated.
    pub skipped: bool,
}

/// `r + gamma (1 - done) (lambda min(q1, q2) + (1 - lambda) max(q1, q2) - alpha log_prob)`.
/// The entropy term is dropped when `entropy` is false.
#[allow(clippy::too_many_arguments)]
pub fn convex_target_from_values<T: Scalar>(
    r: &Array2<T>,
    done: &Array2<T>,
    values: &TargetValues<T>,
    alpha: T,
    gamma: T,
    lambda: T,
    entropy: bool,
) -> Array2<T> {
    let keep = T::one() - lambda;
    let ent = if entropy { alpha } else { T::zero() };
    let mut y = r.clone();
    Zip::from(&mut y)
        .and(done)
        .and(&values.q1)
        .and(&values.q2)
        .and(&values.log_prob)
        .for_each(|y, &d, &a, &b, &lp| {
            let mix = lambda * a.min(b) + keep * a.max(b);
            *y += gamma * (T::one() - d) * (mix - ent * lp);
        });
    y
}

/// Clipped double-Q target, `r + gamma (1 - done) (min(q1, q2) - alpha log_prob)`.
pub fn cdq_target<T: Scalar>(
    r: &Array2<T>,
    done: &Array2<T>,
    values: &TargetValues<T>,
    alpha: T,
    gamma: T,
    entropy: bool,
) -> Array2<T> {
    let ent = if entropy { alpha } else { T::zero() };
    let mut y = r.clone();
    Zip::from(&mut y)
        .and(done)
        .and(&values.q1)
        .and(&values.q2)
        .and(&values.log_prob)
        .for_each(|y, &d, &a, &b, &lp| {
            *y += gamma * (T::one() - d) * (a.min(b) - ent * lp);
        });
    y
}

impl<T: Scalar> TrainState<T> {
    /// Fresh networks; targets start as exact copies of the critics.
    pub fn new(cfg: &TrainConfig, obs_dim: usize, act_dim: usize) -> Result<Self> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);

        let critic_cfg = CriticConfig {
            obs_dim,
            act_dim,
            hidden: cfg.hidden,
            depth: cfg.depth,
            c: cfg.c,
            activation: cfg.activation,
            layer_norm: cfg.layer_norm,
            skip: cfg.skip,
            init: cfg.init_scheme(),
        };
        let critics = [
            CriticNet::new(critic_cfg.clone(), &mut init_rng)?,
            CriticNet::new(critic_cfg, &mut init_rng)?,
        ];
        let targets = critics.clone();
        let mut actor_cfg = ActorConfig::new(obs_dim, act_dim, cfg.actor_hidden.clone());
        actor_cfg.init = cfg.init_scheme();
        let actor = ActorNet::new(actor_cfg, &mut init_rng)?;
        let mut log_alpha = ParamStore::new();
        log_alpha.add("log_alpha", Array2::from_elem((1, 1), T::of(cfg.init_alpha.ln())));

        Ok(Self {
            critic_opts: [
                AdamState::new(critics[0].params.values()),
                AdamState::new(critics[1].params.values()),
            ],
            actor_opt: AdamState::new(actor.params.values()),
            alpha_opt: AdamState::new(log_alpha.values()),
            target_entropy: T::of(cfg.target_entropy.unwrap_or(-(act_dim as f64))),
            critics,
            targets,
            actor,
            log_alpha,
            rng,
        })
    }

    pub fn log_alpha(&self) -> T {
        self.log_alpha.values()[0][[0, 0]]
    }

    pub fn alpha(&self) -> T {
        self.log_alpha().exp()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.config().act_dim
    }

    /// Standard normal draws, `rows x act_dim`.
    pub fn draw_noise(&mut self, rows: usize) -> Array2<T> {
        let rng = &mut self.rng;
        Array2::from_shape_fn((rows, self.actor.config().act_dim), |_| {
            let v: f64 = StandardNormal.sample(rng);
            T::of(v)
        })
    }

    /// Target critics and the policy's log-density at `(s', a')`, `a' = tanh(mean + std * noise)`.
    pub fn target_values(&self, s2: &Array2<T>, noise: &Array2<T>) -> Result<TargetValues<T>> {
        let mut tape = Tape::new();
        let actor_vars = self.actor.bind(&mut tape, false);
        let t1 = self.targets[0].bind(&mut tape, false);
        let t2 = self.targets[1].bind(&mut tape, false);
        let s = tape.constant_view(s2.view());
        let p = self.actor.sample(&mut tape, &actor_vars, s, noise)?;
        let o = tape.concat_cols(s, p.action)?;
        let q1 = self.targets[0].forward(&mut tape, &t1, o)?;
        let q2 = self.targets[1].forward(&mut tape, &t2, o)?;
        Ok(TargetValues {
            q1: tape.value(q1).to_owned(),
            q2: tape.value(q2).to_owned(),
            log_prob: tape.value(p.log_prob).to_owned(),
        })
    }

    /// Convex-combination Q target for `batch`, with `a'` drawn from `noise`.
    pub fn convex_q_target(
        &self,
        batch: &Batch<T>,
        noise: &Array2<T>,
        cfg: &TrainConfig,
    ) -> Result<Array2<T>> {
        let values = self.target_values(&batch.s2, noise)?;
        let y = convex_target_from_values(
            &batch.r,
            &batch.done,
            &values,
            self.alpha(),
            T::of(cfg.gamma),
            T::of(cfg.lambda),
            cfg.entropy_in_target,
        );
        if let Some(i) = y.iter().position(|v| !v.is_finite_value()) {
            return Err(Error::NonFinite {
                context: format!(
                    "critic target, row {i} of {}: r={:.4e} done={} q1'={:.4e} q2'={:.4e} log_pi={:.4e} alpha={:.4e}",
                    y.nrows(),
                    batch.r[[i, 0]].to_f64(),
                    batch.done[[i, 0]],
                    values.q1[[i, 0]].to_f64(),
                    values.q2[[i, 0]].to_f64(),
                    values.log_prob[[i, 0]].to_f64(),
                    self.alpha().to_f64()
                ),
            });
        }
        Ok(y)
    }

    /// One Adam step per critic on the mean squared error to `y`.
    pub fn critic_update(
        &mut self,
        batch: &Batch<T>,
        y: &Array2<T>,
        cfg: &TrainConfig,
    ) -> Result<CriticStats<T>> {
        let (grads, loss, q_mean) = {
            let mut tape = Tape::new();
            let vars = [
                self.critics[0].bind(&mut tape, true),
                self.critics[1].bind(&mut tape, true),
            ];
            let s = tape.constant_view(batch.s.view());
            let a = tape.constant_view(batch.a.view());
            let o = tape.concat_cols(s, a)?;
            let target = tape.constant_view(y.view());
            let mut losses = Vec::with_capacity(2);
            let mut q_sum = T::zero();
            for (net, v) in self.critics.iter().zip(&vars) {
                let q = net.forward(&mut tape, v, o)?;
                q_sum += tape.value(q).sum();
                let err = tape.sub(q, target)?;
                let sq = tape.square(err);
                losses.push(tape.mean(sq));
            }
            let loss = [tape.scalar(losses[0]), tape.scalar(losses[1])];
            if let Some(i) = loss.iter().position(|l| !l.is_finite_value()) {
                return Err(Error::NonFinite {
                    context: format!("critic {} loss", i + 1),
                });
            }
            let total = tape.add(losses[0], losses[1])?;
            tape.backward(total)?;
            let grads = vars.map(|v| v.iter().map(|&p| tape.take_grad(p)).collect::<Vec<_>>());
            let n = T::of((2 * batch.len()).max(1) as f64);
            (grads, loss, q_sum / n)
        };
        let lr = T::of(cfg.lr);
        for ((net, opt), g) in self.critics.iter_mut().zip(&mut self.critic_opts).zip(&grads) {
            net.params.adam_step(opt, g, lr)?;
        }
        Ok(CriticStats { loss, q_mean })
    }

    /// One Adam step on the policy, minimizing `mean(alpha log_pi - (q1 + q2) / 2)`
    /// with reparameterized actions from `noise`. Critics are not modified.
    pub fn actor_update(
        &mut self,
        batch: &Batch<T>,
        noise: &Array2<T>,
        cfg: &TrainConfig,
    ) -> Result<ActorStats<T>> {
        let alpha = self.alpha();
        let (grads, loss, log_prob) = {
            let mut tape = Tape::new();
            let av = self.actor.bind(&mut tape, true);
            let c1 = self.critics[0].bind(&mut tape, false);
            let c2 = self.critics[1].bind(&mut tape, false);
            let s = tape.constant_view(batch.s.view());
            let p = self.actor.sample(&mut tape, &av, s, noise)?;
            let o = tape.concat_cols(s, p.action)?;
            let q1 = self.critics[0].forward(&mut tape, &c1, o)?;
            let q2 = self.critics[1].forward(&mut tape, &c2, o)?;
            let q_sum = tape.add(q1, q2)?;
            let q_avg = tape.scale(q_sum, T::of(0.5));
            let ent = tape.scale(p.log_prob, alpha);
            let obj = tape.sub(ent, q_avg)?;
            let loss = tape.mean(obj);
            let value = tape.scalar(loss);
            if !value.is_finite_value() {
                return Err(Error::NonFinite {
                    context: "actor loss".into(),
                });
            }
            tape.backward(loss)?;
            let grads: Vec<_> = av.iter().map(|&p| tape.take_grad(p)).collect();
            (grads, value, tape.value(p.log_prob).to_owned())
        };
        self.actor.params.adam_step(&mut self.actor_opt, &grads, T::of(cfg.lr))?;
        Ok(ActorStats { loss, log_prob })
    }

    /// Adam step on `log_alpha` for the loss `mean(-log_alpha (log_pi + target_entropy))`.
    /// Returns the new `alpha`.
    pub fn temperature_update(&mut self, log_prob: &Array2<T>, cfg: &TrainConfig) -> Result<T> {
        if !cfg.autotune {
            return Ok(self.alpha());
        }
        let n = T::of(log_prob.len().max(1) as f64);
        let mean = log_prob.sum() / n + self.target_entropy;
        let grad = Array2::from_elem((1, 1), -mean);
        self.log_alpha
            .adam_step(&mut self.alpha_opt, std::slice::from_ref(&grad), T::of(cfg.lr))?;
        Ok(self.alpha())
    }

    pub fn polyak(&mut self, tau: T) -> Result<()> {
        for (t, c) in self.targets.iter_mut().zip(&self.critics) {
            t.params.polyak_from(&c.params, tau)?;
        }
        Ok(())
    }

    /// Sample one batch and run `cfg.smr` full update iterations on it.
    pub fn smr_train_step(
        &mut self,
        buffer: &ReplayBuffer<T>,
        cfg: &TrainConfig,
    ) -> Result<SmrMetrics> {
        if buffer.is_empty() {
            return Ok(SmrMetrics {
                skipped: true,
                ..SmrMetrics::default()
            });
        }
        let batch = buffer.sample(cfg.batch_size, &mut self.rng)?;
        let frozen = cfg
            .freeze_target_noise
            .then(|| self.draw_noise(batch.len()));
        let mut metrics = SmrMetrics::default();
        for _ in 0..cfg.smr {
            let noise = match &frozen {
                Some(n) => n.clone(),
                None => self.draw_noise(batch.len()),
            };
            let y = self.convex_q_target(&batch, &noise, cfg)?;
            let critic = self.critic_update(&batch, &y, cfg)?;
            self.polyak(T::of(cfg.tau))?;
            let actor_noise = self.draw_noise(batch.len());
            let actor = self.actor_update(&batch, &actor_noise, cfg)?;
            let alpha = self.temperature_update(&actor.log_prob, cfg)?;
            metrics = SmrMetrics {
                critic_loss: 0.5 * (critic.loss[0].to_f64() + critic.loss[1].to_f64()),
                actor_loss: actor.loss.to_f64(),
                alpha: alpha.to_f64(),
                q_mean: critic.q_mean.to_f64(),
                skipped: false,
            };
        }
        Ok(metrics)
    }

    pub fn critic_steps(&self) -> u64 {
        self.critic_opts[0].step_count
    }

    pub fn actor_steps(&self) -> u64 {
        self.actor_opt.step_count
    }
}
