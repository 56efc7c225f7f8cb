use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use super::features::FeatureMap;
use super::mdp::{sample_row, stationary_distribution, FiniteMdp, Policy};
use crate::error::{Error, Result};

/// `L(theta) = theta^T (A + lambda I) theta - 2 theta^T b + c`, the
/// ridge-regularized squared TD error on `psi = tanh(W phi)` features.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedQuadratic {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub lambda: f64,
    pub theta_star: DVector<f64>,
}

impl RegularizedQuadratic {
    fn from_moments(a: DMatrix<f64>, b: DVector<f64>, c: f64, lambda: f64) -> Result<Self> {
        if lambda.is_nan() || lambda <= 0.0 {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        let h = &a + DMatrix::identity(a.nrows(), a.nrows()) * lambda;
        let chol = h
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("A + lambda I is not positive definite".into()))?;
        let theta_star = chol.solve(&b);
        let q = Self {
            a,
            b,
            c,
            lambda,
            theta_star,
        };
        let g = q.gradient(&q.theta_star);
        let scale = q.b.norm().max(1.0);
        if g.norm() > 1e-10 * scale {
            return Err(Error::NonFinite {
                context: format!("gradient at the minimizer is {:e}", g.norm()),
            });
        }
        Ok(q)
    }

    /// `A + lambda I`.
    pub fn hessian_half(&self) -> DMatrix<f64> {
        &self.a + DMatrix::identity(self.a.nrows(), self.a.nrows()) * self.lambda
    }

    pub fn loss(&self, theta: &DVector<f64>) -> f64 {
        (theta.transpose() * self.hessian_half() * theta)[0] - 2.0 * theta.dot(&self.b) + self.c
    }

    pub fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        (self.hessian_half() * theta - &self.b) * 2.0
    }

    /// `L(theta) - L(theta*)`, evaluated as `e^T (A + lambda I) e`.
    pub fn gap(&self, theta: &DVector<f64>) -> f64 {
        let e = theta - &self.theta_star;
        (e.transpose() * self.hessian_half() * &e)[0]
    }

    /// Largest eigenvalue of the Hessian `2 (A + lambda I)`.
    pub fn beta(&self) -> f64 {
        2.0 * self.hessian_half().symmetric_eigenvalues().max()
    }
}

fn accumulate(a: &mut DMatrix<f64>, b: &mut DVector<f64>, c: &mut f64, u: &DVector<f64>, r: f64, w: f64) {
    *a += u * u.transpose() * w;
    *b -= u * (r * w);
    *c += r * r * w;
}

/// Exact moments over `s ~ nu`, `a ~ pi(s)`, `s' ~ P(s, a)`.
pub fn regularized_quadratic(
    mdp: &FiniteMdp,
    features: &FeatureMap,
    pi: &Policy,
    lambda: f64,
) -> Result<RegularizedQuadratic> {
    let (p_pi, _) = mdp.induced(pi);
    let nu = stationary_distribution(&p_pi)?;
    let psi = features.transformed();
    let d = features.dim();
    let (mut a, mut b, mut c) = (DMatrix::zeros(d, d), DVector::zeros(d), 0.0);
    for s in 0..mdp.states() {
        for act in 0..mdp.actions() {
            let w_sa = nu[s] * pi[(s, act)];
            if w_sa == 0.0 {
                continue;
            }
            let r = mdp.r[(s, act)];
            for s2 in 0..mdp.states() {
                let w = w_sa * mdp.p[act][(s, s2)];
                let u = (psi.row(s2) * mdp.gamma - psi.row(s)).transpose();
                accumulate(&mut a, &mut b, &mut c, &u, r, w);
            }
        }
    }
    RegularizedQuadratic::from_moments(a, b, c, lambda)
}

/// Monte-Carlo moments from `n` independent `(s, a, s')` draws.
pub fn regularized_quadratic_mc<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    features: &FeatureMap,
    pi: &Policy,
    lambda: f64,
    n: usize,
    rng: &mut R,
) -> Result<RegularizedQuadratic> {
    let (p_pi, _) = mdp.induced(pi);
    let nu = stationary_distribution(&p_pi)?;
    let psi = features.transformed();
    let d = features.dim();
    let (mut a, mut b, mut c) = (DMatrix::zeros(d, d), DVector::zeros(d), 0.0);
    let w = 1.0 / n as f64;
    for _ in 0..n {
        let s = sample_row(nu.iter().copied(), rng);
        let act = sample_row(pi.row(s).iter().copied(), rng);
        let s2 = mdp.sample_next(s, act, rng);
        let u = (psi.row(s2) * mdp.gamma - psi.row(s)).transpose();
        accumulate(&mut a, &mut b, &mut c, &u, mdp.r[(s, act)], w);
    }
    RegularizedQuadratic::from_moments(a, b, c, lambda)
}

#[derive(Debug, Clone, Serialize)]
pub struct GdRun {
    /// `L(theta_t) - L(theta*)` for `t = 0..=steps`.
    pub gaps: Vec<f64>,
    /// `gap_{t+1} / gap_t` while the gap is above the rounding floor.
    pub ratios: Vec<f64>,
    /// `1 - 2 alpha lambda`.
    pub ratio_bound: f64,
    /// First step whose ratio exceeded `ratio_bound + 1e-9`.
    pub first_ratio_violation: Option<usize>,
    /// First step with `gap_t > (1 - 2 lambda / beta)^t gap_0` beyond 1e-9 relative slack.
    pub first_envelope_violation: Option<usize>,
    pub theta: Vec<f64>,
    /// `|theta_T - theta*|_inf`.
    pub theta_error: f64,
}

/// Full-gradient descent from `theta0`.
pub fn regularized_gd(
    q: &RegularizedQuadratic,
    alpha: f64,
    theta0: &DVector<f64>,
    steps: usize,
) -> Result<GdRun> {
    let beta = q.beta();
    if !(alpha > 0.0 && alpha <= 1.0 / beta) {
        return Err(Error::InvalidInput(format!("step size {alpha} outside (0, 1/beta = {}]", 1.0 / beta)));
    }
    if q.lambda >= beta / 2.0 {
        return Err(Error::InvalidInput(format!("lambda {} must be below beta/2 = {}", q.lambda, beta / 2.0)));
    }
    let ratio_bound = 1.0 - 2.0 * alpha * q.lambda;
    let envelope = 1.0 - 2.0 * q.lambda / beta;
    let mut theta = theta0.clone();
    let gap0 = q.gap(&theta);
    let floor = gap0 * 1e-24;
    let mut gaps = vec![gap0];
    let mut ratios = Vec::new();
    let (mut first_ratio_violation, mut first_envelope_violation) = (None, None);
    for t in 0..steps {
        theta -= q.gradient(&theta) * alpha;
        let prev = gaps[t];
        let gap = q.gap(&theta);
        if prev > floor {
            let ratio = gap / prev;
            if ratio > ratio_bound + 1e-9 && first_ratio_violation.is_none() {
                first_ratio_violation = Some(t);
            }
            ratios.push(ratio);
        }
        if gap > envelope.powi(t as i32 + 1) * gap0 * (1.0 + 1e-9) && first_envelope_violation.is_none() {
            first_envelope_violation = Some(t + 1);
        }
        gaps.push(gap);
    }
    Ok(GdRun {
        theta_error: (&theta - &q.theta_star).amax(),
        theta: theta.iter().copied().collect(),
        gaps,
        ratios,
        ratio_bound,
        first_ratio_violation,
        first_envelope_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::mdp::uniform_policy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag_quadratic(a: &[f64], b: &[f64], lambda: f64) -> RegularizedQuadratic {
        RegularizedQuadratic::from_moments(
            DMatrix::from_diagonal(&DVector::from_column_slice(a)),
            DVector::from_column_slice(b),
            0.0,
            lambda,
        )
        .unwrap()
    }

    #[test]
    fn zero_rewards_give_zero_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mdp = FiniteMdp::random(5, 2, 0.9, &mut rng);
        mdp.r.fill(0.0);
        let f = FeatureMap::random(5, 3, 1.0, &mut rng).unwrap();
        let q = regularized_quadratic(&mdp, &f, &uniform_policy(5, 2), 0.1).unwrap();
        assert_eq!(q.b.norm(), 0.0);
        assert_eq!(q.theta_star.norm(), 0.0);
    }

    #[test]
    fn two_state_chain_by_hand() {
        // P = [[0.5, 0.5], [0.25, 0.75]] gives nu = (1/3, 2/3)
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.25, 0.75]);
        let r = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let gamma = 0.5;
        let mdp = FiniteMdp::new(vec![p], r, gamma, 1.0).unwrap();
        let w = 0.8f64;
        let f = FeatureMap::new(DMatrix::from_row_slice(2, 1, &[1.0, 2.0]), DVector::from_element(1, w)).unwrap();
        let lambda = 0.2;
        let q = regularized_quadratic(&mdp, &f, &uniform_policy(2, 1), lambda).unwrap();

        let (p0, p1) = (w.tanh(), (2.0 * w).tanh());
        let u = |s: usize, s2: usize| gamma * [p0, p1][s2] - [p0, p1][s];
        let terms = [
            (1.0 / 3.0 * 0.5, 0, 0, 1.0),
            (1.0 / 3.0 * 0.5, 0, 1, 1.0),
            (2.0 / 3.0 * 0.25, 1, 0, -1.0),
            (2.0 / 3.0 * 0.75, 1, 1, -1.0),
        ];
        let a: f64 = terms.iter().map(|&(wt, s, s2, _)| wt * u(s, s2).powi(2)).sum();
        let b: f64 = -terms.iter().map(|&(wt, s, s2, r)| wt * r * u(s, s2)).sum::<f64>();
        let c: f64 = terms.iter().map(|&(wt, _, _, r)| wt * r * r).sum();
        assert!((q.a[(0, 0)] - a).abs() < 1e-14);
        assert!((q.b[0] - b).abs() < 1e-14);
        assert!((q.c - c).abs() < 1e-14);
        assert!((q.theta_star[0] - b / (a + lambda)).abs() < 1e-14);
        // L(theta) matches the direct expectation of the squared TD error plus ridge
        let th = 0.37;
        let direct: f64 = terms
            .iter()
            .map(|&(wt, s, s2, r)| wt * (r + th * u(s, s2)).powi(2))
            .sum::<f64>()
            + lambda * th * th;
        assert!((q.loss(&DVector::from_element(1, th)) - direct).abs() < 1e-14);
    }

    #[test]
    fn monte_carlo_moments_approach_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = FiniteMdp::random(6, 2, 0.9, &mut rng);
        let f = FeatureMap::random(6, 3, 1.0, &mut rng).unwrap();
        let pi = uniform_policy(6, 2);
        let exact = regularized_quadratic(&mdp, &f, &pi, 0.1).unwrap();
        let mc = regularized_quadratic_mc(&mdp, &f, &pi, 0.1, 100_000, &mut rng).unwrap();
        let rel = (&mc.a - &exact.a).norm() / exact.a.norm();
        assert!(rel < 1e-2, "{rel}");
    }

    #[test]
    fn start_at_optimum_stays_there() {
        let q = diag_quadratic(&[1.0, 2.0], &[0.5, -1.0], 0.1);
        let run = regularized_gd(&q, 1.0 / q.beta(), &q.theta_star.clone(), 10).unwrap();
        assert_eq!(run.gaps[0], 0.0);
        assert!(run.gaps.iter().all(|&g| g < 1e-30));
    }

    #[test]
    fn diagonal_contraction_by_coordinate() {
        // each coordinate error shrinks by 1 - 2 alpha (a_i + lambda)
        let (a, lambda) = ([1.0, 3.0], 0.5);
        let q = diag_quadratic(&a, &[1.0, 1.0], lambda);
        let alpha = 0.5 / q.beta();
        let theta0 = DVector::from_column_slice(&[2.0, -1.0]);
        let run = regularized_gd(&q, alpha, &theta0, 5).unwrap();
        let e0 = &theta0 - &q.theta_star;
        for t in 0..=5 {
            let want: f64 = (0..2)
                .map(|i| {
                    let f = (1.0 - 2.0 * alpha * (a[i] + lambda)).powi(t as i32);
                    (a[i] + lambda) * (f * e0[i]).powi(2)
                })
                .sum();
            assert!((run.gaps[t] - want).abs() < 1e-13 * run.gaps[0]);
        }
        assert!(run.first_ratio_violation.is_none());
    }

    #[test]
    fn rejects_oversized_step_and_lambda() {
        let q = diag_quadratic(&[1.0], &[1.0], 0.1);
        let z = DVector::zeros(1);
        assert!(regularized_gd(&q, 2.0 / q.beta(), &z, 1).is_err());
        let big = diag_quadratic(&[0.0, 0.0], &[1.0, 1.0], 5.0);
        assert!(regularized_gd(&big, 1.0 / big.beta(), &DVector::zeros(2), 1).is_err());
    }
}
