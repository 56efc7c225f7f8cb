use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use super::mdp::FiniteMdp;
use super::td::StepSchedule;
use crate::error::{Error, Result};

/// `lambda min(qa, qb) + (1 - lambda) max(qa, qb)`.
pub fn convex_pair(qa: f64, qb: f64, lambda: f64) -> f64 {
    lambda * qa.min(qb) + (1.0 - lambda) * qa.max(qb)
}

/// Index of the largest entry of row `s`, first on ties.
pub fn greedy(q: &DMatrix<f64>, s: usize) -> usize {
    let mut best = 0;
    for a in 1..q.ncols() {
        if q[(s, a)] > q[(s, best)] {
            best = a;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TabularConfig {
    pub lambda: f64,
    /// Per-cell step size, indexed by the cell's previous visit count.
    pub schedule: StepSchedule,
    /// Exploration rate of the epsilon-greedy behavior policy on `Q^A`.
    pub epsilon: f64,
    pub steps: usize,
    /// Spread of the initial tables, drawn independently in `[-init, init]`.
    pub init: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistoryPoint {
    pub step: usize,
    /// `|Q^A - Q*|_inf`.
    pub error_a: f64,
    /// `|Q^B - Q^A|_inf`.
    pub spread: f64,
}

#[derive(Debug, Clone)]
pub struct TabularRun {
    pub qa: DMatrix<f64>,
    pub qb: DMatrix<f64>,
    pub history: Vec<HistoryPoint>,
    pub visits: DMatrix<u64>,
    /// Largest `| |new Q^B - Q^A| - (1 - alpha) |old Q^B - Q^A| |` over all updates.
    pub delta_identity_error: f64,
}

impl TabularRun {
    pub fn error_a(&self, q_star: &DMatrix<f64>) -> f64 {
        (&self.qa - q_star).amax()
    }

    pub fn error_b(&self, q_star: &DMatrix<f64>) -> f64 {
        (&self.qb - q_star).amax()
    }
}

/// Two-table convex Q-learning along one behavior trajectory from state 0.
/// `q_star` only feeds the history.
pub fn tabular_convex_q<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    cfg: &TabularConfig,
    q_star: &DMatrix<f64>,
    rng: &mut R,
) -> Result<TabularRun> {
    if !(0.0..=1.0).contains(&cfg.epsilon) || !(0.0..=1.0).contains(&cfg.lambda) {
        return Err(Error::InvalidInput("epsilon and lambda must lie in [0, 1]".into()));
    }
    let (ns, na) = (mdp.states(), mdp.actions());
    let mut init = || {
        DMatrix::from_fn(ns, na, |_, _| {
            if cfg.init > 0.0 {
                rng.random_range(-cfg.init..=cfg.init)
            } else {
                0.0
            }
        })
    };
    let mut qa = init();
    let mut qb = init();
    let mut visits = DMatrix::<u64>::zeros(ns, na);
    let mut history = Vec::new();
    let every = (cfg.steps / 100).max(1);
    let mut worst = 0.0f64;
    let mut s = 0;
    for t in 0..cfg.steps {
        let a = if rng.random::<f64>() < cfg.epsilon {
            rng.random_range(0..na)
        } else {
            greedy(&qa, s)
        };
        let s2 = mdp.sample_next(s, a, rng);
        let a_star = greedy(&qa, s2);
        let y = mdp.r[(s, a)] + mdp.gamma * convex_pair(qa[(s2, a_star)], qb[(s2, a_star)], cfg.lambda);
        let alpha = cfg.schedule.at(visits[(s, a)] as usize);
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidInput(format!("step size {alpha} outside [0, 1]")));
        }
        let old = (qb[(s, a)] - qa[(s, a)]).abs();
        qa[(s, a)] += alpha * (y - qa[(s, a)]);
        qb[(s, a)] += alpha * (y - qb[(s, a)]);
        let new = (qb[(s, a)] - qa[(s, a)]).abs();
        worst = worst.max((new - (1.0 - alpha) * old).abs());
        visits[(s, a)] += 1;
        if (t + 1) % every == 0 {
            history.push(HistoryPoint {
                step: t + 1,
                error_a: (&qa - q_star).amax(),
                spread: (&qb - &qa).amax(),
            });
        }
        s = s2;
    }
    if !qa.iter().chain(qb.iter()).all(|x| x.is_finite()) {
        return Err(Error::NonFinite {
            context: "tabular value tables".into(),
        });
    }
    Ok(TabularRun {
        qa,
        qb,
        history,
        visits,
        delta_identity_error: worst,
    })
}
