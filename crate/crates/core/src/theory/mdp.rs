use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

/// Finite MDP with `p[a][(s, s')] = P(s' | s, a)` and rewards `r[(s, a)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    pub p: Vec<DMatrix<f64>>,
    pub r: DMatrix<f64>,
    pub gamma: f64,
    pub r_max: f64,
}

/// Stochastic policy, `pi[(s, a)]`.
pub type Policy = DMatrix<f64>;

impl FiniteMdp {
    pub fn new(p: Vec<DMatrix<f64>>, r: DMatrix<f64>, gamma: f64, r_max: f64) -> Result<Self> {
        let mdp = Self { p, r, gamma, r_max };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Dirichlet(1) transition rows and rewards uniform in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(states: usize, actions: usize, gamma: f64, rng: &mut R) -> Self {
        let p = (0..actions)
            .map(|_| {
                let mut m = DMatrix::from_fn(states, states, |_, _| {
                    let e: f64 = Exp1.sample(rng);
                    e
                });
                for mut row in m.row_iter_mut() {
                    let s = row.sum();
                    row /= s;
                }
                m
            })
            .collect();
        let r = DMatrix::from_fn(states, actions, |_, _| rng.random_range(-1.0..=1.0));
        Self {
            p,
            r,
            gamma,
            r_max: 1.0,
        }
    }

    pub fn states(&self) -> usize {
        self.r.nrows()
    }

    pub fn actions(&self) -> usize {
        self.r.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.states(), self.actions());
        if s == 0 || a == 0 || self.p.len() != a {
            return Err(Error::InvalidInput(format!(
                "mdp needs {a} transition matrices for {s} states, got {}",
                self.p.len()
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidInput(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        for (ai, m) in self.p.iter().enumerate() {
            if m.shape() != (s, s) {
                return Err(Error::InvalidInput(format!("P[{ai}] has shape {:?}", m.shape())));
            }
            for (si, row) in m.row_iter().enumerate() {
                if row.iter().any(|&x| x.is_nan() || x < 0.0) || (row.sum() - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "P[{ai}] row {si} is not a distribution"
                    )));
                }
            }
        }
        if self.r.iter().any(|x| x.is_nan() || x.abs() > self.r_max) {
            return Err(Error::InvalidInput(format!(
                "reward exceeds r_max = {}",
                self.r_max
            )));
        }
        Ok(())
    }

    /// Markov chain `P_pi` and expected reward `r_pi` induced by `pi`.
    pub fn induced(&self, pi: &Policy) -> (DMatrix<f64>, DVector<f64>) {
        let s = self.states();
        let mut p = DMatrix::zeros(s, s);
        let mut r = DVector::zeros(s);
        for a in 0..self.actions() {
            for i in 0..s {
                let w = pi[(i, a)];
                r[i] += w * self.r[(i, a)];
                for j in 0..s {
                    p[(i, j)] += w * self.p[a][(i, j)];
                }
            }
        }
        (p, r)
    }

    /// Draw `s' ~ P(. | s, a)`.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_row(self.p[a].row(s).iter().copied(), rng)
    }
}

pub fn uniform_policy(states: usize, actions: usize) -> Policy {
    DMatrix::from_element(states, actions, 1.0 / actions as f64)
}

/// Index drawn from an iterator of probabilities summing to one.
pub fn sample_row<R: Rng + ?Sized>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn reachable(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let next = level[u].map(|l| l + 1);
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = next;
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Fails unless `p` is irreducible and aperiodic.
pub fn check_ergodic(p: &DMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| p[(i, j)] > 0.0).collect())
        .collect();
    let mut radj = vec![Vec::new(); n];
    for (i, out) in adj.iter().enumerate() {
        for &j in out {
            radj[j].push(i);
        }
    }
    let forward = reachable(&adj, 0);
    let backward = reachable(&radj, 0);
    let unreachable: Vec<usize> = (0..n).filter(|&i| forward[i].is_none()).collect();
    if !unreachable.is_empty() {
        return Err(Error::NotErgodic(format!(
            "states {unreachable:?} are unreachable from state 0"
        )));
    }
    let stuck: Vec<usize> = (0..n).filter(|&i| backward[i].is_none()).collect();
    if !stuck.is_empty() {
        return Err(Error::NotErgodic(format!(
            "state 0 is unreachable from states {stuck:?}"
        )));
    }
    // period = gcd of level[u] + 1 - level[v] over all edges u -> v
    let mut period = 0;
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            let (lu, lv) = (forward[u].unwrap_or(0), forward[v].unwrap_or(0));
            period = gcd(period, (lu + 1).abs_diff(lv));
        }
    }
    if period != 1 {
        return Err(Error::NotErgodic(format!("chain is periodic with period {period}")));
    }
    Ok(())
}

/// Stationary distribution of a row-stochastic `p` by power iteration.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_ergodic(p)?;
    let n = p.nrows();
    let pt = p.transpose();
    let mut nu = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..1_000_000 {
        let mut next = &pt * &nu;
        next /= next.sum();
        let delta = (&next - &nu).abs().sum();
        nu = next;
        if delta < 1e-15 {
            break;
        }
    }
    let residual = (&pt * &nu - &nu).abs().max();
    if residual > 1e-12 {
        return Err(Error::NotErgodic(format!(
            "power iteration stalled with residual {residual:e}"
        )));
    }
    Ok(nu)
}

/// Optimal action values with sup-norm error at most `tol`.
pub fn value_iteration(mdp: &FiniteMdp, tol: f64) -> DMatrix<f64> {
    let (s, a) = (mdp.states(), mdp.actions());
    let mut q = DMatrix::zeros(s, a);
    let threshold = if mdp.gamma > 0.0 {
        tol * (1.0 - mdp.gamma) / mdp.gamma
    } else {
        f64::INFINITY
    };
    loop {
        let next = bellman_optimality(mdp, &q);
        let change = (&next - &q).abs().max();
        q = next;
        if change < threshold || mdp.gamma == 0.0 {
            return q;
        }
    }
}

/// `r + gamma P max_a Q`.
pub fn bellman_optimality(mdp: &FiniteMdp, q: &DMatrix<f64>) -> DMatrix<f64> {
    let v = DVector::from_iterator(q.nrows(), q.row_iter().map(|row| row.max()));
    let mut out = mdp.r.clone();
    for a in 0..mdp.actions() {
        let pv = &mdp.p[a] * &v;
        for i in 0..mdp.states() {
            out[(i, a)] += mdp.gamma * pv[i];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_mdp_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = FiniteMdp::random(10, 3, 0.9, &mut rng);
        m.validate().unwrap();
        assert!(m.r.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn doubly_stochastic_chain_is_uniform() {
        let p = DMatrix::from_row_slice(3, 3, &[0.2, 0.5, 0.3, 0.3, 0.2, 0.5, 0.5, 0.3, 0.2]);
        let nu = stationary_distribution(&p).unwrap();
        assert!(nu.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn two_state_chain_by_hand() {
        // P = [[1-a, a], [b, 1-b]] has nu = (b, a) / (a + b)
        let (a, b) = (0.3, 0.1);
        let p = DMatrix::from_row_slice(2, 2, &[1.0 - a, a, b, 1.0 - b]);
        let nu = stationary_distribution(&p).unwrap();
        assert!((nu[0] - b / (a + b)).abs() < 1e-12);
        assert!((nu[1] - a / (a + b)).abs() < 1e-12);
        assert!((nu.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reducible_and_periodic_chains_are_rejected() {
        let p = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0]);
        let err = stationary_distribution(&p).unwrap_err().to_string();
        assert!(err.contains("[1, 2]"), "{err}");
        let flip = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(stationary_distribution(&flip), Err(Error::NotErgodic(_))));
    }

    #[test]
    fn value_iteration_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut zero = FiniteMdp::random(4, 2, 0.9, &mut rng);
        zero.r.fill(0.0);
        assert!(value_iteration(&zero, 1e-10).iter().all(|&q| q == 0.0));

        let one = FiniteMdp::new(vec![DMatrix::from_element(1, 1, 1.0)], DMatrix::from_element(1, 1, 1.0), 0.5, 1.0)
            .unwrap();
        assert!((value_iteration(&one, 1e-12)[(0, 0)] - 2.0).abs() < 1e-12);

        let m = FiniteMdp::random(5, 3, 0.9, &mut rng);
        let q = value_iteration(&m, 1e-10);
        let residual = (bellman_optimality(&m, &q) - &q).abs().max();
        assert!(residual < 1e-10);
    }
}
