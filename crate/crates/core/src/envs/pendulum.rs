use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clamp_action, Env, EnvSpec, StepOutcome};
use crate::error::{Error, Result};

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_TORQUE: f64 = 2.0;
const MAX_SPEED: f64 = 8.0;
const HORIZON: usize = 200;

/// Pendulum swing-up. Angle 0 is upright; observation `(cos, sin, angular velocity)`.
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    t: usize,
    warnings: u64,
    rng: ChaCha8Rng,
}

/// Wrap an angle into `[-pi, pi)`.
pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn new(seed: u64) -> Self {
        Self {
            spec: EnvSpec {
                name: "pendulum",
                obs_dim: 3,
                act_dim: 1,
                action_bound: 1.0,
                horizon: HORIZON,
            },
            theta: 0.0,
            theta_dot: 0.0,
            t: 0,
            warnings: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Start an episode from a given angle and angular velocity.
    pub fn reset_to(&mut self, theta: f64, theta_dot: f64) -> Vec<f64> {
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.t = 0;
        self.obs()
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Vec<f64> {
        let theta = self.rng.random_range(-PI..PI);
        let theta_dot = self.rng.random_range(-1.0..1.0);
        self.reset_to(theta, theta_dot)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.t >= HORIZON {
            return Err(Error::InvalidInput("pendulum stepped past its horizon".into()));
        }
        let (a, clamped) = clamp_action(&self.spec, action)?;
        self.warnings += clamped as u64;
        let torque = MAX_TORQUE * a[0];
        let err = angle_normalize(self.theta);
        let reward = -(err * err + 0.1 * self.theta_dot * self.theta_dot + 0.001 * torque * torque);

        // semi-implicit Euler: velocity first, then position with the new velocity
        let acc = 3.0 * GRAVITY / (2.0 * LENGTH) * self.theta.sin()
            + 3.0 / (MASS * LENGTH * LENGTH) * torque;
        self.theta_dot = (self.theta_dot + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += self.theta_dot * DT;
        self.t += 1;
        Ok(StepOutcome {
            obs: self.obs(),
            reward,
            terminal: false,
            truncated: self.t >= HORIZON,
        })
    }

    fn clamp_warnings(&self) -> u64 {
        self.warnings
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode_return(env: &mut Pendulum, policy: impl Fn(&[f64]) -> f64) -> f64 {
        let mut obs = env.reset_to(PI, 0.0);
        let mut total = 0.0;
        loop {
            let out = env.step(&[policy(&obs)]).unwrap();
            total += out.reward;
            let done = out.done();
            obs = out.obs;
            if done {
                return total;
            }
        }
    }

    #[test]
    fn upright_rest_costs_nothing() {
        let mut env = Pendulum::new(0);
        env.reset_to(0.0, 0.0);
        assert_eq!(env.step(&[0.0]).unwrap().reward, 0.0);
    }

    #[test]
    fn hanging_rest_costs_pi_squared() {
        let mut env = Pendulum::new(0);
        env.reset_to(PI, 0.0);
        let r = env.step(&[0.0]).unwrap().reward;
        assert!((r + PI * PI).abs() < 1e-12);
    }

    #[test]
    fn energy_pumping_beats_doing_nothing() {
        let mut env = Pendulum::new(0);
        // bang-bang on the energy error, E = w^2/2 + 15 cos(theta), upright rest E = 15
        let pump = |o: &[f64]| {
            let energy = 0.5 * o[2] * o[2] + 15.0 * o[0];
            if o[2] * (15.0 - energy) >= 0.0 { 1.0 } else { -1.0 }
        };
        let pumped = episode_return(&mut env, pump);
        let idle = episode_return(&mut env, |_| 0.0);
        assert!(pumped > idle, "{pumped} vs {idle}");
    }

    #[test]
    fn horizon_ends_the_episode() {
        let mut env = Pendulum::new(1);
        env.reset();
        for t in 1..=HORIZON {
            let out = env.step(&[0.3]).unwrap();
            assert_eq!(out.truncated, t == HORIZON);
            assert!(!out.terminal);
        }
        assert!(env.step(&[0.0]).is_err());
    }

    #[test]
    fn speed_is_clipped() {
        let mut env = Pendulum::new(2);
        env.reset_to(0.5, 0.0);
        for _ in 0..100 {
            env.step(&[1.0]).unwrap();
            assert!(env.state().1.abs() <= MAX_SPEED);
        }
    }

    #[test]
    fn angle_normalize_wraps() {
        assert!((angle_normalize(3.0 * PI) + PI).abs() < 1e-12);
        assert_eq!(angle_normalize(0.25), 0.25);
        assert!((angle_normalize(-1.5 * PI) - 0.5 * PI).abs() < 1e-12);
    }
}
