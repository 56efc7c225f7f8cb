use ndarray::Array2;
use rand::Rng;

use super::{init_weight, InitScheme, ParamId, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ActorConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
    pub init: InitScheme,
}

impl ActorConfig {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            obs_dim,
            act_dim,
            hidden,
            init: InitScheme::UniformFanIn,
        }
    }
}

/// Output of [`ActorNet::sample`].
#[derive(Debug, Clone, Copy)]
pub struct PolicySample {
    /// `B x act_dim` in `[-1, 1]`; interior unless `tanh` saturates.
    pub action: Var,
    /// `B x 1` log-density of `action`.
    pub log_prob: Var,
    pub mean: Var,
    pub log_std: Var,
}

/// Plain MLP producing a tanh-squashed Gaussian policy.
#[derive(Debug, Clone)]
pub struct ActorNet<T: Scalar> {
    config: ActorConfig,
    pub params: ParamStore<T>,
    layers: Vec<(ParamId, ParamId)>,
    mean_head: (ParamId, ParamId),
    log_std_head: (ParamId, ParamId),
}

impl<T: Scalar> ActorNet<T> {
    pub fn new<R: Rng + ?Sized>(config: ActorConfig, rng: &mut R) -> Result<Self> {
        if config.obs_dim == 0 || config.act_dim == 0 || config.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "actor dimensions must be positive: obs {} act {} hidden {:?}",
                config.obs_dim, config.act_dim, config.hidden
            )));
        }
        let mut params = ParamStore::new();
        let mut add = |name: String, o: usize, i: usize, rng: &mut R| {
            let (w, b) = init_weight(o, i, config.init, rng);
            (
                params.add(format!("{name}.w"), w),
                params.add(format!("{name}.b"), b),
            )
        };
        let mut layers = Vec::new();
        let mut width = config.obs_dim;
        for (i, &h) in config.hidden.iter().enumerate() {
            layers.push(add(format!("hidden{}", i + 1), h, width, rng));
            width = h;
        }
        let mean_head = add("mean".into(), config.act_dim, width, rng);
        let log_std_head = add("log_std".into(), config.act_dim, width, rng);
        Ok(Self {
            config,
            params,
            layers,
            mean_head,
            log_std_head,
        })
    }

    pub fn config(&self) -> &ActorConfig {
        &self.config
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>, trainable: bool) -> Vec<Var> {
        self.params.bind(tape, trainable)
    }

    pub fn mean_head(&self) -> (ParamId, ParamId) {
        self.mean_head
    }

    pub fn log_std_head(&self) -> (ParamId, ParamId) {
        self.log_std_head
    }

    /// Pre-squash mean and clamped log standard deviation.
    pub fn distribution(&self, tape: &mut Tape<'_, T>, vars: &[Var], s: Var) -> Result<(Var, Var)> {
        let mut x = s;
        for &(w, b) in &self.layers {
            let pre = tape.linear(x, vars[w.0], vars[b.0])?;
            x = tape.elu(pre);
        }
        let mean = tape.linear(x, vars[self.mean_head.0 .0], vars[self.mean_head.1 .0])?;
        let raw = tape.linear(x, vars[self.log_std_head.0 .0], vars[self.log_std_head.1 .0])?;
        let log_std = tape.clamp(raw, T::of(LOG_STD_MIN), T::of(LOG_STD_MAX));
        Ok((mean, log_std))
    }

    /// Reparameterized sample `tanh(mean + std * noise)` with its log-density.
    /// `noise` holds standard normal draws, one row per state.
    pub fn sample(
        &self,
        tape: &mut Tape<'_, T>,
        vars: &[Var],
        s: Var,
        noise: &Array2<T>,
    ) -> Result<PolicySample> {
        let (mean, log_std) = self.distribution(tape, vars, s)?;
        if tape.value(mean).dim() != noise.dim() {
            return Err(Error::Shape {
                op: "policy noise",
                left: tape.value(mean).dim(),
                right: noise.dim(),
            });
        }
        let std = tape.exp(log_std);
        let eps = tape.constant(noise.clone());
        let spread = tape.mul(std, eps)?;
        let u = tape.add(mean, spread)?;
        let action = tape.tanh(u);

        // log N(u; mean, std) = -eps^2/2 - log_std - ln(2 pi)/2
        let half_ln_2pi = T::of(0.5 * (2.0 * std::f64::consts::PI).ln());
        let gauss_const = tape.constant(noise.mapv(|e| -T::of(0.5) * e * e - half_ln_2pi));
        let neg_log_std = tape.scale(log_std, -T::one());
        let log_gauss = tape.add(neg_log_std, gauss_const)?;

        // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
        let m2u = tape.scale(u, -T::of(2.0));
        let sp = tape.softplus(m2u);
        let u_sp = tape.add(u, sp)?;
        let neg = tape.scale(u_sp, -T::of(2.0));
        let log_jac = tape.add_scalar(neg, T::of(2.0 * std::f64::consts::LN_2));

        let per_dim = tape.sub(log_gauss, log_jac)?;
        let log_prob = tape.sum_rows(per_dim);
        Ok(PolicySample {
            action,
            log_prob,
            mean,
            log_std,
        })
    }

    /// `tanh(mean)`.
    pub fn deterministic(&self, tape: &mut Tape<'_, T>, vars: &[Var], s: Var) -> Result<Var> {
        let (mean, _) = self.distribution(tape, vars, s)?;
        Ok(tape.tanh(mean))
    }

    /// Actions for a batch of states, outside any training graph.
    /// `noise = None` gives the deterministic policy.
    pub fn act(&self, s: &Array2<T>, noise: Option<&Array2<T>>) -> Result<Array2<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let sv = tape.constant_view(s.view());
        let a = match noise {
            Some(n) => self.sample(&mut tape, &vars, sv, n)?.action,
            None => self.deterministic(&mut tape, &vars, sv)?,
        };
        Ok(tape.value(a).to_owned())
    }
}
