use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::{json, Value};

use super::features::{check_linear_independence, gaussian_matrix, singular_values, FeatureMap, RANK_TOL};
use super::mdp::{uniform_policy, value_iteration, FiniteMdp};
use super::quadratic::{regularized_gd, regularized_quadratic};
use super::tabular::{tabular_convex_q, TabularConfig};
use super::td::{run_td0, semi_gradient_variance, StepSchedule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Theorem {
    T1,
    T2,
    T3,
    T4,
    T5,
}

impl Theorem {
    pub const ALL: [Theorem; 5] = [Theorem::T1, Theorem::T2, Theorem::T3, Theorem::T4, Theorem::T5];

    pub fn as_str(self) -> &'static str {
        match self {
            Theorem::T1 => "t1",
            Theorem::T2 => "t2",
            Theorem::T3 => "t3",
            Theorem::T4 => "t4",
            Theorem::T5 => "t5",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Theorem::T1 => "rank preserved under tanh(c Phi)",
            Theorem::T2 => "semi-gradient variance bounds",
            Theorem::T3 => "projected TD(0) with tanh converges",
            Theorem::T4 => "regularized quadratic converges linearly",
            Theorem::T5 => "tabular convex Q-learning reaches Q*",
        }
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Theorem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Theorem::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown theorem `{s}` (expected t1..t5 or all)")))
    }
}

/// Outcome of one theorem check for one seed.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremReport {
    pub theorem: Theorem,
    pub parameters: Value,
    pub seed: u64,
    pub pass: bool,
    /// Headline statistic.
    pub observed: f64,
    /// Threshold the headline statistic is compared against.
    pub bound: f64,
    /// Positive when the headline comparison holds.
    pub margin: f64,
    /// Secondary checks and statistics.
    pub details: Value,
}

/// Overrides for the per-theorem defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TheoryOverrides {
    /// Feature scale `W = c I`.
    pub c: Option<f64>,
    /// Convex target weight for the tabular check.
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    /// Iteration budget of the stochastic checks.
    pub steps: Option<usize>,
}

pub const T1_C: f64 = 0.01;
pub const T1_TRIALS: usize = 100;
pub const T2_C: f64 = 0.5;
pub const T2_DIM: usize = 8;
pub const T2_SAMPLES: usize = 10_000;
pub const T2_GAMMA: f64 = 0.99;
pub const T3_STATES: usize = 10;
pub const T3_ACTIONS: usize = 3;
pub const T3_DIM: usize = 4;
pub const T3_C: f64 = 1.0;
pub const T3_GAMMA: f64 = 0.9;
pub const T3_STEPS: usize = 200_000;
pub const T3_RADIUS: f64 = 1e3;
pub const T3_TOL: f64 = 1e-2;
pub const T4_STATES: usize = 6;
pub const T4_ACTIONS: usize = 3;
pub const T4_DIM: usize = 4;
pub const T4_C: f64 = 1.0;
pub const T4_GAMMA: f64 = 0.9;
pub const T4_STEPS: usize = 400;
pub const T5_STATES: usize = 5;
pub const T5_ACTIONS: usize = 3;
pub const T5_GAMMA: f64 = 0.9;
pub const T5_EPSILON: f64 = 0.2;
pub const T5_STEPS: usize = 30_000_000;
pub const T5_SCHEDULE: StepSchedule = StepSchedule::Harmonic { a: 10.0, b: 20.0 };
pub const T5_LAMBDAS: [f64; 2] = [0.3, 1.0];
pub const T5_TOL: f64 = 1e-2;

fn rng_for(theorem: Theorem, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(theorem as u64 + 1);
    rng
}

/// Run one theorem check; the tabular check yields one report per lambda.
pub fn run_theorem(theorem: Theorem, seed: u64, o: &TheoryOverrides) -> Result<Vec<TheoremReport>> {
    match theorem {
        Theorem::T1 => t1(seed, o).map(|r| vec![r]),
        Theorem::T2 => t2(seed, o).map(|r| vec![r]),
        Theorem::T3 => t3(seed, o).map(|r| vec![r]),
        Theorem::T4 => t4(seed, o).map(|r| vec![r]),
        Theorem::T5 => match o.lambda {
            Some(l) => t5(seed, l, o).map(|r| vec![r]),
            None => T5_LAMBDAS.iter().map(|&l| t5(seed, l, o)).collect(),
        },
    }
}

#[allow(clippy::too_many_arguments)]
fn report(theorem: Theorem, seed: u64, parameters: Value, pass: bool, observed: f64, bound: f64, margin: f64, details: Value) -> TheoremReport {
    TheoremReport {
        theorem,
        parameters,
        seed,
        pass,
        observed,
        bound,
        margin,
        details,
    }
}

/// Rank of `tanh(c Phi)` against rank of `Phi` for random Gaussian `20 x 6`.
pub fn t1(seed: u64, o: &TheoryOverrides) -> Result<TheoremReport> {
    let c = o.c.unwrap_or(T1_C);
    let mut rng = rng_for(Theorem::T1, seed);
    let (mut preserved, mut worst) = (0, f64::INFINITY);
    for _ in 0..T1_TRIALS {
        let phi = gaussian_matrix(20, 6, &mut rng);
        let rep = check_linear_independence(&phi, c);
        preserved += (rep.rank_before == 6 && rep.rank_after == 6) as usize;
        let sv = singular_values(&phi.map(|x| (c * x).tanh()));
        worst = worst.min(sv.min() / sv.max());
    }
    Ok(report(
        Theorem::T1,
        seed,
        json!({"rows": 20, "cols": 6, "c": c, "trials": T1_TRIALS, "rank_tol": RANK_TOL}),
        preserved == T1_TRIALS,
        worst,
        RANK_TOL,
        worst - RANK_TOL,
        json!({"preserved": preserved, "min_relative_singular_value": worst}),
    ))
}

/// Monte-Carlo semi-gradient variance on standard Gaussian features.
pub fn t2(seed: u64, o: &TheoryOverrides) -> Result<TheoremReport> {
    let c = o.c.unwrap_or(T2_C);
    let gamma = o.gamma.unwrap_or(T2_GAMMA);
    let n = o.steps.unwrap_or(T2_SAMPLES);
    let mut rng = rng_for(Theorem::T2, seed);
    let theta = DVector::from_fn(T2_DIM, |_, _| StandardNormal.sample(&mut rng));
    let theta = theta.normalize();
    let rep = semi_gradient_variance(
        |r: &mut ChaCha8Rng| DVector::from_fn(T2_DIM, |_, _| StandardNormal.sample(r)),
        &theta,
        gamma,
        1.0,
        &DVector::from_element(T2_DIM, c),
        n,
        &mut rng,
    );
    let plain_ok = rep.empirical_plain <= rep.bound_plain + 3.0 * rep.bound_plain_se;
    let tanh_ok = rep.empirical_tanh <= rep.bound_tanh + 3.0 * rep.bound_tanh_se;
    let pointwise_ok = c > 1.0 || rep.tanh_bound_violations == 0;
    let reduced = rep.empirical_tanh <= rep.empirical_plain;
    Ok(report(
        Theorem::T2,
        seed,
        json!({"d": T2_DIM, "samples": n, "gamma": gamma, "r_max": 1.0, "c": c}),
        plain_ok && tanh_ok && pointwise_ok && reduced,
        rep.empirical_tanh,
        rep.empirical_plain,
        rep.empirical_plain - rep.empirical_tanh,
        json!({
            "plain_bound_holds": plain_ok,
            "tanh_bound_holds": tanh_ok,
            "tanh_bound_pointwise_tighter": pointwise_ok,
            "tanh_variance_smaller": reduced,
            "variance": rep,
        }),
    ))
}

/// Projected TD(0) on tanh features of a random ergodic MDP under the
/// uniform policy, `alpha_t = 1 / (1 + t/100)`.
pub fn t3(seed: u64, o: &TheoryOverrides) -> Result<TheoremReport> {
    let c = o.c.unwrap_or(T3_C);
    let gamma = o.gamma.unwrap_or(T3_GAMMA);
    let steps = o.steps.unwrap_or(T3_STEPS);
    let schedule = StepSchedule::Harmonic { a: 100.0, b: 100.0 };
    let mut rng = rng_for(Theorem::T3, seed);
    let mdp = FiniteMdp::random(T3_STATES, T3_ACTIONS, gamma, &mut rng);
    let features = FeatureMap::random(T3_STATES, T3_DIM, c, &mut rng)?;
    let run = run_td0(&mdp, &features, &uniform_policy(T3_STATES, T3_ACTIONS), schedule, true, T3_RADIUS, steps, &mut rng)?;
    let pass = run.tail_movement < T3_TOL && run.orthogonality_residual < T3_TOL;
    Ok(report(
        Theorem::T3,
        seed,
        json!({"states": T3_STATES, "actions": T3_ACTIONS, "d": T3_DIM, "c": c, "gamma": gamma,
               "steps": steps, "radius": T3_RADIUS, "schedule": schedule}),
        pass,
        run.tail_movement,
        T3_TOL,
        T3_TOL - run.tail_movement,
        json!({
            "tail_movement": run.tail_movement,
            "half_movement": run.half_movement,
            "orthogonality_residual": run.orthogonality_residual,
            "fixed_point_distance": run.fixed_point_distance,
            "projections": run.projections,
            "robbins_monro": run.robbins_monro,
        }),
    ))
}

/// Gradient descent on the exact regularized quadratic with
/// `lambda = 0.1 beta / 2` and `alpha = 1 / beta`.
pub fn t4(seed: u64, o: &TheoryOverrides) -> Result<TheoremReport> {
    let c = o.c.unwrap_or(T4_C);
    let gamma = o.gamma.unwrap_or(T4_GAMMA);
    let steps = o.steps.unwrap_or(T4_STEPS);
    let mut rng = rng_for(Theorem::T4, seed);
    let mdp = FiniteMdp::random(T4_STATES, T4_ACTIONS, gamma, &mut rng);
    let features = FeatureMap::random(T4_STATES, T4_DIM, c, &mut rng)?;
    let pi = uniform_policy(T4_STATES, T4_ACTIONS);
    // beta = 2 (lmax(A) + lambda) and lambda = beta / 20 give lambda = lmax(A) / 9
    let probe = regularized_quadratic(&mdp, &features, &pi, 1.0)?;
    let lmax = probe.a.symmetric_eigenvalues().max();
    let q = regularized_quadratic(&mdp, &features, &pi, lmax / 9.0)?;
    let beta = q.beta();
    let alpha = 1.0 / beta;
    let run = regularized_gd(&q, alpha, &DVector::zeros(T4_DIM), steps)?;
    let max_ratio = run.ratios.iter().copied().fold(0.0, f64::max);
    let pass = run.first_ratio_violation.is_none() && run.first_envelope_violation.is_none() && run.theta_error < 1e-8;
    Ok(report(
        Theorem::T4,
        seed,
        json!({"states": T4_STATES, "actions": T4_ACTIONS, "d": T4_DIM, "c": c, "gamma": gamma,
               "steps": steps, "lambda_theta": q.lambda, "beta": beta, "alpha": alpha}),
        pass,
        max_ratio,
        run.ratio_bound,
        run.ratio_bound + 1e-9 - max_ratio,
        json!({
            "first_ratio_violation": run.first_ratio_violation,
            "first_envelope_violation": run.first_envelope_violation,
            "ratios_checked": run.ratios.len(),
            "gap0": run.gaps[0],
            "final_gap": run.gaps.last(),
            "theta_error": run.theta_error,
        }),
    ))
}

/// Tabular convex Q-learning against value iteration on a random 5x3 MDP.
pub fn t5(seed: u64, lambda: f64, o: &TheoryOverrides) -> Result<TheoremReport> {
    let gamma = o.gamma.unwrap_or(T5_GAMMA);
    let steps = o.steps.unwrap_or(T5_STEPS);
    let mut rng = rng_for(Theorem::T5, seed);
    let mdp = FiniteMdp::random(T5_STATES, T5_ACTIONS, gamma, &mut rng);
    let q_star = value_iteration(&mdp, 1e-12);
    let cfg = TabularConfig {
        lambda,
        schedule: T5_SCHEDULE,
        epsilon: T5_EPSILON,
        steps,
        init: 1.0,
    };
    let run = tabular_convex_q(&mdp, &cfg, &q_star, &mut rng)?;
    let err = run.error_a(&q_star);
    let pass = err < T5_TOL && run.delta_identity_error < 1e-12;
    Ok(report(
        Theorem::T5,
        seed,
        json!({"states": T5_STATES, "actions": T5_ACTIONS, "gamma": gamma, "lambda": lambda,
               "epsilon": T5_EPSILON, "steps": steps, "schedule": T5_SCHEDULE}),
        pass,
        err,
        T5_TOL,
        T5_TOL - err,
        json!({
            "error_b": run.error_b(&q_star),
            "delta_identity_error": run.delta_identity_error,
            "min_visits": run.visits.iter().min(),
            "history": run.history,
        }),
    ))
}
