//! Toy continuous-control environments.

mod pendulum;
mod pointmass;

pub use pendulum::Pendulum;
pub use pointmass::PointMass;

use crate::error::{Error, Result};

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Every action component is clamped into `[-action_bound, action_bound]`.
    pub action_bound: f64,
    pub horizon: usize,
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Absorbing state reached; the value of the next state is zero.
    pub terminal: bool,
    /// Episode cut by the time limit.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Start a new episode and return the first observation.
    fn reset(&mut self) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;

    /// Number of steps whose action had to be clamped into bounds.
    fn clamp_warnings(&self) -> u64;
}

pub const ENV_NAMES: [&str; 2] = ["pendulum", "pointmass"];

/// Environment by name, with its own RNG seeded from `seed`.
pub fn make_env(name: &str, seed: u64) -> Result<Box<dyn Env>> {
    match name {
        "pendulum" => Ok(Box::new(Pendulum::new(seed))),
        "pointmass" => Ok(Box::new(PointMass::new(seed))),
        other => Err(Error::Config(format!(
            "unknown env `{other}` (expected one of {})",
            ENV_NAMES.join(", ")
        ))),
    }
}

/// Validates `action`, clamps it into the box, and reports whether clamping
/// changed anything.
pub(crate) fn clamp_action(spec: &EnvSpec, action: &[f64]) -> Result<(Vec<f64>, bool)> {
    if action.len() != spec.act_dim {
        return Err(Error::InvalidInput(format!(
            "{} expects {} action components, got {}",
            spec.name,
            spec.act_dim,
            action.len()
        )));
    }
    if let Some(bad) = action.iter().find(|a| !a.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite action component {bad}")));
    }
    let b = spec.action_bound;
    let clamped: Vec<f64> = action.iter().map(|a| a.clamp(-b, b)).collect();
    let changed = clamped.iter().zip(action).any(|(c, a)| c != a);
    Ok((clamped, changed))
}
