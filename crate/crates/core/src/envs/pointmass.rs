use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clamp_action, Env, EnvSpec, StepOutcome};
use crate::error::{Error, Result};

const DT: f64 = 0.1;
const DAMPING: f64 = 0.9;
const THRUST: f64 = 0.2;
const ARENA: f64 = 2.0;
const GOAL_RANGE: f64 = 1.0;
const HORIZON: usize = 100;

/// Damped 2-D double integrator that must reach a random goal.
/// Observation `(pos, vel, goal - pos)`, reward `-|pos - goal|`.
#[derive(Debug, Clone)]
pub struct PointMass {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    t: usize,
    warnings: u64,
    rng: ChaCha8Rng,
}

impl PointMass {
    pub fn new(seed: u64) -> Self {
        Self {
            spec: EnvSpec {
                name: "pointmass",
                obs_dim: 6,
                act_dim: 2,
                action_bound: 1.0,
                horizon: HORIZON,
            },
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            t: 0,
            warnings: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn reset_to(&mut self, pos: [f64; 2], vel: [f64; 2], goal: [f64; 2]) -> Vec<f64> {
        self.pos = pos;
        self.vel = vel;
        self.goal = goal;
        self.t = 0;
        self.obs()
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    fn distance(&self) -> f64 {
        let dx = self.pos[0] - self.goal[0];
        let dy = self.pos[1] - self.goal[1];
        dx.hypot(dy)
    }

    fn obs(&self) -> Vec<f64> {
        vec![
            self.pos[0],
            self.pos[1],
            self.vel[0],
            self.vel[1],
            self.goal[0] - self.pos[0],
            self.goal[1] - self.pos[1],
        ]
    }
}

impl Env for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        let goal = [
            self.rng.random_range(-GOAL_RANGE..GOAL_RANGE),
            self.rng.random_range(-GOAL_RANGE..GOAL_RANGE),
        ];
        self.reset_to([0.0; 2], [0.0; 2], goal)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.t >= HORIZON {
            return Err(Error::InvalidInput("pointmass stepped past its horizon".into()));
        }
        let (a, clamped) = clamp_action(&self.spec, action)?;
        self.warnings += clamped as u64;
        for ((p, v), a) in self.pos.iter_mut().zip(&mut self.vel).zip(&a) {
            *v = DAMPING * *v + THRUST * a;
            *p = (*p + *v * DT).clamp(-ARENA, ARENA);
        }
        self.t += 1;
        Ok(StepOutcome {
            obs: self.obs(),
            reward: -self.distance(),
            terminal: false,
            truncated: self.t >= HORIZON,
        })
    }

    fn clamp_warnings(&self) -> u64 {
        self.warnings
    }
}
