use std::fmt::Write as _;
use std::str::FromStr;

use crate::envs::ENV_NAMES;
use crate::error::{Error, Result};
use crate::nn::{Activation, InitScheme};

/// Every hyperparameter of a training run plus the ablation switches.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: String,
    pub seed: u64,
    /// Environment steps, warmup included.
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tau: f64,
    pub buffer_size: usize,
    pub warmup: usize,
    /// Inner iterations per sampled batch.
    pub smr: usize,
    /// Weight of the minimum in the convex target; 1 gives clipped double Q.
    pub lambda: f64,
    pub c: f64,
    pub gamma: f64,
    /// Critic width.
    pub hidden: usize,
    /// Down (and up) layers of the critic.
    pub depth: usize,
    pub actor_hidden: Vec<usize>,
    /// Defaults to `-act_dim` when unset.
    pub target_entropy: Option<f64>,
    pub init_alpha: f64,
    pub autotune: bool,
    pub activation: Activation,
    pub layer_norm: bool,
    pub skip: bool,
    /// Keep `-alpha log pi` in the critic target.
    pub entropy_in_target: bool,
    /// Reuse one set of target-action noise draws across the inner iterations.
    pub freeze_target_noise: bool,
    pub orthogonal_init: bool,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: "pendulum".into(),
            seed: 0,
            steps: 50_000,
            batch_size: 256,
            lr: 3e-4,
            tau: 5e-3,
            buffer_size: 1_000_000,
            warmup: 5_000,
            smr: 2,
            lambda: 0.3,
            c: 0.1,
            gamma: 0.99,
            hidden: 512,
            depth: 2,
            actor_hidden: vec![512, 512],
            target_entropy: None,
            init_alpha: 1.0,
            autotune: true,
            activation: Activation::Tanh,
            layer_norm: true,
            skip: true,
            entropy_in_target: true,
            freeze_target_noise: false,
            orthogonal_init: false,
            eval_every: 1_000,
            eval_episodes: 5,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`], in echo order.
pub const CONFIG_KEYS: [&str; 26] = [
    "env",
    "seed",
    "steps",
    "batch_size",
    "lr",
    "tau",
    "buffer_size",
    "warmup",
    "smr",
    "lambda",
    "c",
    "gamma",
    "hidden",
    "depth",
    "actor_hidden",
    "target_entropy",
    "init_alpha",
    "autotune",
    "activation",
    "layer_norm",
    "skip",
    "entropy_in_target",
    "freeze_target_noise",
    "orthogonal_init",
    "eval_every",
    "eval_episodes",
];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("field `{key}`: cannot parse `{value}`: {e}")))
}

impl TrainConfig {
    pub fn init_scheme(&self) -> InitScheme {
        if self.orthogonal_init {
            InitScheme::Orthogonal
        } else {
            InitScheme::UniformFanIn
        }
    }

    /// Set one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "env" => self.env = v.to_string(),
            "seed" => self.seed = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "buffer_size" => self.buffer_size = parse(key, v)?,
            "warmup" => self.warmup = parse(key, v)?,
            "smr" => self.smr = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "c" => self.c = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "actor_hidden" => {
                self.actor_hidden = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|w| parse(key, w.trim())).collect::<Result<_>>()?
                }
            }
            "target_entropy" => {
                self.target_entropy = if v == "auto" { None } else { Some(parse(key, v)?) }
            }
            "init_alpha" => self.init_alpha = parse(key, v)?,
            "autotune" => self.autotune = parse(key, v)?,
            "activation" => {
                self.activation = v
                    .parse()
                    .map_err(|e: Error| Error::Config(format!("field `activation`: {e}")))?
            }
            "layer_norm" => self.layer_norm = parse(key, v)?,
            "skip" => self.skip = parse(key, v)?,
            "entropy_in_target" => self.entropy_in_target = parse(key, v)?,
            "freeze_target_noise" => self.freeze_target_noise = parse(key, v)?,
            "orthogonal_init" => self.orthogonal_init = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown field `{other}`"))),
        }
        Ok(())
    }

    /// Parse flat `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv_str(text)?;
        Ok(cfg)
    }

    pub fn apply_kv_str(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1))
            })?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", lineno + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Every field as `key = value` lines; parses back to an identical config.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let hidden: Vec<String> = self.actor_hidden.iter().map(|h| h.to_string()).collect();
        let entropy = self
            .target_entropy
            .map_or_else(|| "auto".to_string(), |e| format!("{e:?}"));
        let fields: [(&str, String); 26] = [
            ("env", self.env.clone()),
            ("seed", self.seed.to_string()),
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("tau", format!("{:?}", self.tau)),
            ("buffer_size", self.buffer_size.to_string()),
            ("warmup", self.warmup.to_string()),
            ("smr", self.smr.to_string()),
            ("lambda", format!("{:?}", self.lambda)),
            ("c", format!("{:?}", self.c)),
            ("gamma", format!("{:?}", self.gamma)),
            ("hidden", self.hidden.to_string()),
            ("depth", self.depth.to_string()),
            ("actor_hidden", hidden.join(",")),
            ("target_entropy", entropy),
            ("init_alpha", format!("{:?}", self.init_alpha)),
            ("autotune", self.autotune.to_string()),
            ("activation", self.activation.to_string()),
            ("layer_norm", self.layer_norm.to_string()),
            ("skip", self.skip.to_string()),
            ("entropy_in_target", self.entropy_in_target.to_string()),
            ("freeze_target_noise", self.freeze_target_noise.to_string()),
            ("orthogonal_init", self.orthogonal_init.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Check ranges; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("field `{field}`: {why}")));
        if !ENV_NAMES.contains(&self.env.as_str()) {
            return bad("env", format!("unknown env `{}` (expected {})", self.env, ENV_NAMES.join(", ")));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda", format!("{} is outside [0, 1]", self.lambda));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", format!("{} is outside [0, 1)", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau", format!("{} is outside (0, 1]", self.tau));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("{} must be positive", self.lr));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("c", format!("{} must be positive", self.c));
        }
        if !(self.init_alpha > 0.0 && self.init_alpha.is_finite()) {
            return bad("init_alpha", format!("{} must be positive", self.init_alpha));
        }
        if let Some(h) = self.target_entropy {
            if !h.is_finite() {
                return bad("target_entropy", "must be finite".into());
            }
        }
        for (field, v) in [
            ("smr", self.smr),
            ("batch_size", self.batch_size),
            ("buffer_size", self.buffer_size),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
        ] {
            if v == 0 {
                return bad(field, "must be at least 1".into());
            }
        }
        if self.hidden < 2 {
            return bad("hidden", format!("{} is below 2", self.hidden));
        }
        if self.actor_hidden.contains(&0) {
            return bad("actor_hidden", "layer widths must be positive".into());
        }
        Ok(())
    }
}
