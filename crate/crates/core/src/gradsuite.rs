//! Finite-difference audit of every tape primitive and both networks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::autodiff::{grad_check, Tape, Var, AVG_RNORM_EPS, LAYER_NORM_EPS};
use crate::error::Result;
use crate::nn::{ActorConfig, ActorNet, CriticConfig, CriticNet};

/// Deliberate backward corruption, for exercising the suite itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Fault {
    /// `tanh` reports `1 - y^2 + 0.1` as its derivative.
    Tanh,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradSuiteConfig {
    pub points: usize,
    pub threshold: f64,
    pub eps: f64,
    pub critic_hidden: usize,
    pub critic_depth: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for GradSuiteConfig {
    fn default() -> Self {
        Self {
            points: 100,
            threshold: 1e-4,
            eps: 1e-5,
            critic_hidden: 64,
            critic_depth: 2,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub points: usize,
    pub elements: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradSuiteReport {
    pub threshold: f64,
    pub entries: Vec<GradEntry>,
}

impl GradSuiteReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| !e.pass).map(|e| e.name.as_str()).collect()
    }
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| StandardNormal.sample(rng))
}

type Build = fn(&mut Tape<'_, f64>, &[Var], Option<Fault>) -> Result<Var>;

struct Primitive {
    name: &'static str,
    /// Shapes of the differentiated inputs.
    inputs: &'static [(usize, usize)],
    /// Output shape, for the random readout weights.
    out: (usize, usize),
    build: Build,
}

fn tanh_op(t: &mut Tape<'_, f64>, x: Var, fault: Option<Fault>) -> Var {
    match fault {
        Some(Fault::Tanh) => t.map(x, f64::tanh, |_, y| 1.0 - y * y + 0.1),
        None => t.tanh(x),
    }
}

const PRIMITIVES: &[Primitive] = &[
    Primitive { name: "linear", inputs: &[(3, 4), (5, 4), (1, 5)], out: (3, 5), build: |t, v, _| t.linear(v[0], v[1], v[2]) },
    Primitive { name: "add", inputs: &[(3, 4), (3, 4)], out: (3, 4), build: |t, v, _| t.add(v[0], v[1]) },
    Primitive { name: "sub", inputs: &[(3, 4), (3, 4)], out: (3, 4), build: |t, v, _| t.sub(v[0], v[1]) },
    Primitive { name: "mul", inputs: &[(3, 4), (3, 4)], out: (3, 4), build: |t, v, _| t.mul(v[0], v[1]) },
    Primitive { name: "scale", inputs: &[(3, 4)], out: (3, 4), build: |t, v, _| Ok(t.scale(v[0], -1.7)) },
    Primitive { name: "add_scalar", inputs: &[(3, 4)], out: (3, 4), build: |t, v, _| Ok(t.add_scalar(v[0], 0.3)) },
    Primitive { name: "tanh", inputs: &[(3, 4)], out: (3, 4), build: |t, v, f| Ok(tanh_op(t, v[0], f)) },
    Primitive { name: "elu", inputs: &[(3, 4)], out: (3, 4), build: |t, v, _| Ok(t.elu(v[0])) },
    Primitive { name: "sigmoid", inputs: &[(3, 4)], out: (3, 4), build: |t, v, _| Ok(t.sigmoid(v[0])) },
    Primitive { name: "softmax", inputs: &[(3, 4)], out: (3, 4), build: |t, v, _| Ok(t.softmax(v[0])) },
    Primitive { name: "exp", inputs: &[(3, 4)], out: (3, 4), build: |t, v, _| Ok(t.exp(v[0])) },
    Primitive { name: "softplus", inputs: &[(3, 4)], out: (3, 4), build: |t, v, _| Ok(t.softplus(v[0])) },
    Primitive { name: "square", inputs: &[(3, 4)], out: (3, 4), build: |t, v, _| Ok(t.square(v[0])) },
    Primitive { name: "clamp", inputs: &[(3, 4)], out: (3, 4), build: |t, v, _| Ok(t.clamp(v[0], -0.5, 0.5)) },
    Primitive {
        name: "layer_norm",
        inputs: &[(3, 5)],
        out: (3, 5),
        build: |t, v, _| t.layer_norm(v[0], None, LAYER_NORM_EPS),
    },
    Primitive {
        name: "layer_norm_affine",
        inputs: &[(3, 5), (1, 5), (1, 5)],
        out: (3, 5),
        build: |t, v, _| t.layer_norm(v[0], Some((v[1], v[2])), LAYER_NORM_EPS),
    },
    Primitive { name: "avg_rnorm", inputs: &[(3, 5)], out: (3, 5), build: |t, v, _| Ok(t.avg_rnorm(v[0], 0.1, AVG_RNORM_EPS)) },
    Primitive { name: "sum_rows", inputs: &[(3, 4)], out: (3, 1), build: |t, v, _| Ok(t.sum_rows(v[0])) },
    Primitive { name: "sum", inputs: &[(3, 4)], out: (1, 1), build: |t, v, _| Ok(t.sum(v[0])) },
    Primitive { name: "mean", inputs: &[(3, 4)], out: (1, 1), build: |t, v, _| Ok(t.mean(v[0])) },
    Primitive { name: "concat_cols", inputs: &[(3, 2), (3, 3)], out: (3, 5), build: |t, v, _| t.concat_cols(v[0], v[1]) },
];

/// Names of the primitives the suite covers.
pub fn primitive_names() -> Vec<&'static str> {
    PRIMITIVES.iter().map(|p| p.name).collect()
}

fn check_primitive(p: &Primitive, cfg: &GradSuiteConfig, rng: &mut ChaCha8Rng) -> Result<GradEntry> {
    let (mut worst, mut elements) = (0.0f64, 0);
    for _ in 0..cfg.points {
        let inputs: Vec<Array2<f64>> = p.inputs.iter().map(|&(r, c)| randn(rng, r, c)).collect();
        // random readout so symmetric ops (softmax, layer_norm) have nonzero gradients
        let readout = randn(rng, p.out.0, p.out.1);
        let rep = grad_check(
            |t, v| {
                let y = (p.build)(t, v, cfg.fault)?;
                let r = t.constant(readout.clone());
                let yr = t.mul(y, r)?;
                Ok(t.sum(yr))
            },
            &inputs,
            cfg.eps,
        )?;
        worst = worst.max(rep.max_rel_err);
        elements += rep.checked;
    }
    Ok(GradEntry {
        name: p.name.to_string(),
        max_rel_err: worst,
        points: cfg.points,
        elements,
        pass: worst < cfg.threshold,
    })
}

fn critic_entry(cfg: &GradSuiteConfig, rng: &mut ChaCha8Rng) -> Result<GradEntry> {
    let (obs, act) = (3, 1);
    let net = CriticNet::<f64>::new(CriticConfig::new(obs, act, cfg.critic_hidden, cfg.critic_depth), rng)?;
    let o = randn(rng, 4, obs + act);
    let rep = grad_check(
        |t, v| {
            let x = t.constant(o.clone());
            let q = net.forward(t, v, x)?;
            Ok(t.sum(q))
        },
        net.params.values(),
        cfg.eps,
    )?;
    Ok(GradEntry {
        name: format!("critic(h={}, L={})", cfg.critic_hidden, cfg.critic_depth),
        max_rel_err: rep.max_rel_err,
        points: 1,
        elements: rep.checked,
        pass: rep.max_rel_err < cfg.threshold,
    })
}

fn actor_entry(cfg: &GradSuiteConfig, rng: &mut ChaCha8Rng) -> Result<GradEntry> {
    let net = ActorNet::<f64>::new(ActorConfig::new(3, 2, vec![16, 16]), rng)?;
    let s = randn(rng, 4, 3);
    let noise = randn(rng, 4, 2);
    let weights = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
    let rep = grad_check(
        |t, v| {
            let x = t.constant(s.clone());
            let sample = net.sample(t, v, x, &noise)?;
            let w = t.constant(weights.clone());
            let aw = t.mul(sample.action, w)?;
            let a = t.sum(aw);
            let lp = t.sum(sample.log_prob);
            t.add(a, lp)
        },
        net.params.values(),
        cfg.eps,
    )?;
    Ok(GradEntry {
        name: "actor".into(),
        max_rel_err: rep.max_rel_err,
        points: 1,
        elements: rep.checked,
        pass: rep.max_rel_err < cfg.threshold,
    })
}

pub fn run_grad_suite(cfg: &GradSuiteConfig) -> Result<GradSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = PRIMITIVES
        .iter()
        .map(|p| check_primitive(p, cfg, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    entries.push(critic_entry(cfg, &mut rng)?);
    entries.push(actor_entry(cfg, &mut rng)?);
    Ok(GradSuiteReport {
        threshold: cfg.threshold,
        entries,
    })
}
