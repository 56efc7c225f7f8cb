use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use super::features::FeatureMap;
use super::mdp::{sample_row, stationary_distribution, FiniteMdp, Policy};
use crate::error::{Error, Result};

/// Step-size schedule indexed from `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StepSchedule {
    /// `a / (b + t)`: divergent sum, convergent sum of squares.
    Harmonic { a: f64, b: f64 },
    Constant(f64),
}

impl StepSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Harmonic { a, b } => a / (b + t as f64),
            StepSchedule::Constant(c) => c,
        }
    }

    pub fn is_robbins_monro(&self) -> bool {
        matches!(self, StepSchedule::Harmonic { a, b } if *a > 0.0 && *b > 0.0)
    }
}

/// `theta + alpha (r + gamma phi(s')^T theta - phi(s)^T theta) phi(s)`.
pub fn td0_step(
    theta: &DVector<f64>,
    phi_s: &DVector<f64>,
    phi_s2: &DVector<f64>,
    r: f64,
    alpha: f64,
    gamma: f64,
) -> DVector<f64> {
    let delta = r + gamma * phi_s2.dot(theta) - phi_s.dot(theta);
    theta + phi_s * (alpha * delta)
}

/// `v * min(1, radius / |v|)`.
pub fn project_ball(v: DVector<f64>, radius: f64) -> DVector<f64> {
    let n = v.norm();
    if n > radius {
        v * (radius / n)
    } else {
        v
    }
}

pub fn tanh_features(phi: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    phi.component_mul(w).map(f64::tanh)
}

/// TD(0) step on `tanh(W phi)` features, projected onto `|theta| <= c_theta`.
#[allow(clippy::too_many_arguments)]
pub fn td0_tanh_step(
    theta: &DVector<f64>,
    phi_s: &DVector<f64>,
    phi_s2: &DVector<f64>,
    r: f64,
    alpha: f64,
    gamma: f64,
    w: &DVector<f64>,
    c_theta: f64,
) -> DVector<f64> {
    let next = td0_step(theta, &tanh_features(phi_s, w), &tanh_features(phi_s2, w), r, alpha, gamma);
    project_ball(next, c_theta)
}

#[derive(Debug, Clone, Serialize)]
pub struct TdRun {
    pub theta: Vec<f64>,
    /// `|theta_T - theta_{3T/4}|`.
    pub tail_movement: f64,
    /// `|theta_T - theta_{T/2}|`.
    pub half_movement: f64,
    /// `|Phi^T D_nu (T V - V)|` at the final parameters.
    pub orthogonality_residual: f64,
    /// Distance to the unprojected TD fixed point.
    pub fixed_point_distance: f64,
    pub robbins_monro: bool,
    /// Updates where the projection changed the iterate.
    pub projections: usize,
    pub steps: usize,
    /// `theta` every `steps / 100` updates.
    pub trajectory: Vec<Vec<f64>>,
}

/// Solution of `Phi^T D (I - gamma P) Phi theta = Phi^T D r`.
pub fn td_fixed_point(
    phi: &DMatrix<f64>,
    p: &DMatrix<f64>,
    r: &DVector<f64>,
    nu: &DVector<f64>,
    gamma: f64,
) -> Result<DVector<f64>> {
    let d = DMatrix::from_diagonal(nu);
    let n = p.nrows();
    let a = phi.transpose() * &d * (DMatrix::identity(n, n) - p * gamma) * phi;
    let b = phi.transpose() * &d * r;
    a.lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidInput("TD fixed-point system is singular".into()))
}

/// `|Phi^T D (r + gamma P Phi theta - Phi theta)|`.
pub fn projected_bellman_residual(
    phi: &DMatrix<f64>,
    p: &DMatrix<f64>,
    r: &DVector<f64>,
    nu: &DVector<f64>,
    gamma: f64,
    theta: &DVector<f64>,
) -> f64 {
    let v = phi * theta;
    let tv = r + p * &v * gamma;
    (phi.transpose() * DMatrix::from_diagonal(nu) * (tv - v)).norm()
}

/// Simulate the chain induced by `pi` from state 0 and run TD(0), plain or
/// with tanh features and projection radius `c_theta`.
#[allow(clippy::too_many_arguments)]
pub fn run_td0<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    features: &FeatureMap,
    pi: &Policy,
    schedule: StepSchedule,
    use_tanh: bool,
    c_theta: f64,
    steps: usize,
    rng: &mut R,
) -> Result<TdRun> {
    let (p_pi, r_pi) = mdp.induced(pi);
    let nu = stationary_distribution(&p_pi)?;
    let phi = features.matrix(use_tanh);
    let rows: Vec<DVector<f64>> = (0..phi.nrows()).map(|i| phi.row(i).transpose()).collect();
    let d = features.dim();

    let mut theta = DVector::zeros(d);
    let (mut at_half, mut at_three_quarters) = (theta.clone(), theta.clone());
    let every = (steps / 100).max(1);
    let mut trajectory = Vec::new();
    let mut projections = 0;
    let mut s = 0;
    for t in 0..steps {
        if t == steps / 2 {
            at_half = theta.clone();
        }
        if t == 3 * steps / 4 {
            at_three_quarters = theta.clone();
        }
        let a = sample_row(pi.row(s).iter().copied(), rng);
        let s2 = mdp.sample_next(s, a, rng);
        let r = mdp.r[(s, a)];
        let next = td0_step(&theta, &rows[s], &rows[s2], r, schedule.at(t), mdp.gamma);
        theta = if use_tanh {
            let projected = project_ball(next.clone(), c_theta);
            projections += (projected != next) as usize;
            projected
        } else {
            next
        };
        if !theta.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("TD(0) parameters at step {t}"),
            });
        }
        if (t + 1) % every == 0 {
            trajectory.push(theta.iter().copied().collect());
        }
        s = s2;
    }
    let fixed = td_fixed_point(&phi, &p_pi, &r_pi, &nu, mdp.gamma)?;
    Ok(TdRun {
        tail_movement: (&theta - &at_three_quarters).norm(),
        half_movement: (&theta - &at_half).norm(),
        orthogonality_residual: projected_bellman_residual(&phi, &p_pi, &r_pi, &nu, mdp.gamma, &theta),
        fixed_point_distance: (&theta - &fixed).norm(),
        robbins_monro: schedule.is_robbins_monro(),
        projections,
        steps,
        theta: theta.iter().copied().collect(),
        trajectory,
    })
}

/// Empirical variance of the semi-gradient with raw and tanh features,
/// against the per-sample bounds.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub samples: usize,
    /// Trace of the empirical covariance.
    pub empirical_plain: f64,
    pub empirical_tanh: f64,
    /// Mean of the per-sample bounds and its standard error.
    pub bound_plain: f64,
    pub bound_plain_se: f64,
    pub bound_tanh: f64,
    pub bound_tanh_se: f64,
    /// Samples where the tanh bound exceeded the plain bound.
    pub tanh_bound_violations: usize,
    /// Samples whose squared gradient norm exceeded its own bound.
    pub pointwise_violations: usize,
    /// Largest `|mean(phi)_j|` in units of its standard error.
    pub feature_mean_z: f64,
    /// `feature_mean_z > 3`.
    pub mean_warning: bool,
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

fn covariance_trace(gs: &[DVector<f64>]) -> f64 {
    let n = gs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = gs.iter().fold(DVector::zeros(gs[0].len()), |acc, g| acc + g) / n as f64;
    gs.iter().map(|g| (g - &mean).norm_squared()).sum::<f64>() / (n - 1) as f64
}

/// Semi-gradients `(r + gamma V(s') - V(s)) grad V(s)` for `n` independent
/// `(phi(s), phi(s'), r)` draws, `r` uniform in `[-r_max, r_max]`.
#[allow(clippy::too_many_arguments)]
pub fn semi_gradient_variance<R: Rng + ?Sized>(
    mut sample_phi: impl FnMut(&mut R) -> DVector<f64>,
    theta: &DVector<f64>,
    gamma: f64,
    r_max: f64,
    w: &DVector<f64>,
    n: usize,
    rng: &mut R,
) -> VarianceReport {
    let lambda_w = w.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let tn = theta.norm();
    let mut plain = Vec::with_capacity(n);
    let mut tanh = Vec::with_capacity(n);
    let (mut bp, mut bt) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut pointwise = 0;
    let mut tanh_worse = 0;
    let mut feature_sum = DVector::zeros(theta.len());
    let mut feature_sq = DVector::zeros(theta.len());
    for _ in 0..n {
        let phi = sample_phi(rng);
        let phi2 = sample_phi(rng);
        feature_sum += &phi;
        feature_sq += phi.component_mul(&phi);
        let r = if r_max > 0.0 {
            rng.random_range(-r_max..=r_max)
        } else {
            0.0
        };
        let g = &phi * (r + gamma * phi2.dot(theta) - phi.dot(theta));
        let (psi, psi2) = (tanh_features(&phi, w), tanh_features(&phi2, w));
        let gt = &psi * (r + gamma * psi2.dot(theta) - psi.dot(theta));

        let big = phi.norm().max(phi2.norm());
        let b_plain = (r_max + (1.0 + gamma) * tn * big).powi(2) * phi.norm_squared();
        let b_tanh = (r_max + (1.0 + gamma) * tn * lambda_w * big).powi(2) * psi.norm_squared();
        pointwise += (g.norm_squared() > b_plain * (1.0 + 1e-12)) as usize;
        pointwise += (gt.norm_squared() > b_tanh * (1.0 + 1e-12)) as usize;
        tanh_worse += (b_tanh > b_plain) as usize;
        plain.push(g);
        tanh.push(gt);
        bp.push(b_plain);
        bt.push(b_tanh);
    }
    let nf = n as f64;
    let mean = &feature_sum / nf;
    let var = feature_sq / nf - mean.component_mul(&mean);
    let z = mean
        .iter()
        .zip(var.iter())
        .map(|(m, v)| if *v > 0.0 { m.abs() / (v / nf).sqrt() } else { 0.0 })
        .fold(0.0, f64::max);
    let (bound_plain, bound_plain_se) = mean_and_se(&bp);
    let (bound_tanh, bound_tanh_se) = mean_and_se(&bt);
    VarianceReport {
        samples: n,
        empirical_plain: covariance_trace(&plain),
        empirical_tanh: covariance_trace(&tanh),
        bound_plain,
        bound_plain_se,
        bound_tanh,
        bound_tanh_se,
        tanh_bound_violations: tanh_worse,
        pointwise_violations: pointwise,
        feature_mean_z: z,
        mean_warning: z > 3.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::features::gaussian_matrix;
    use crate::theory::mdp::uniform_policy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn td0_hand_values() {
        let theta = td0_step(&v(&[0.0]), &v(&[1.0]), &v(&[1.0]), 1.0, 0.5, 0.0);
        assert_eq!(theta[0], 0.5);
        // zero TD error: r + gamma phi'θ = phiθ
        let th = v(&[1.0, 2.0]);
        let same = td0_step(&th, &v(&[1.0, 1.0]), &v(&[0.0, 0.0]), 3.0, 0.7, 0.9);
        assert_eq!(same, th);
    }

    #[test]
    fn td0_increment_is_linear_in_alpha() {
        let th = v(&[0.3, -0.2]);
        let (p, p2) = (v(&[1.0, 0.5]), v(&[-0.4, 2.0]));
        let one = td0_step(&th, &p, &p2, 0.7, 0.1, 0.9) - &th;
        let two = td0_step(&th, &p, &p2, 0.7, 0.2, 0.9) - &th;
        assert!((two - one * 2.0).norm() < 1e-15);
    }

    #[test]
    fn tanh_step_matches_plain_step_for_tiny_w() {
        // tanh(c x) = c x + O(c^3): the increment is c^2 times the plain
        // increment on raw features when theta = 0 and r is scaled by c
        let c = 1e-6;
        let w = DVector::from_element(3, c);
        let (p, p2) = (v(&[0.5, -1.0, 2.0]), v(&[1.5, 0.3, -0.7]));
        let th = v(&[0.2, 0.1, -0.3]) / c;
        let tanh_inc = td0_tanh_step(&th, &p, &p2, 0.4, 0.1, 0.9, &w, 1e30) - &th;
        let plain_inc = (td0_step(&th, &(&p * c), &(&p2 * c), 0.4, 0.1, 0.9) - &th) / c;
        let taylor = plain_inc * c;
        let rel = (&tanh_inc - &taylor).norm() / taylor.norm();
        assert!(rel < 1e-4, "{rel}");
    }

    #[test]
    fn projection_and_fixed_point() {
        let w = DVector::from_element(2, 1.0);
        let th = td0_tanh_step(&v(&[0.0, 0.0]), &v(&[3.0, 3.0]), &v(&[0.0, 0.0]), 50.0, 1.0, 0.0, &w, 2.0);
        assert!(th.norm() <= 2.0 + 1e-12);
        let inside = v(&[0.1, 0.2]);
        let p = v(&[1.0, 0.0]);
        let psi = tanh_features(&p, &w);
        let r = psi.dot(&inside);
        let same = td0_tanh_step(&inside, &p, &DVector::zeros(2), r, 0.5, 0.0, &w, 2.0);
        assert!((same - inside).norm() < 1e-15);
    }

    #[test]
    fn myopic_td_recovers_weighted_projection_of_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mdp = FiniteMdp::random(6, 1, 0.0, &mut rng);
        // orthonormal features
        let q = gaussian_matrix(6, 3, &mut rng).qr().q();
        let features = FeatureMap::new(q.clone(), DVector::from_element(3, 1.0)).unwrap();
        let pi = uniform_policy(6, 1);
        let run = run_td0(&mdp, &features, &pi, StepSchedule::Harmonic { a: 10.0, b: 10.0 }, false, 1e9, 200_000, &mut rng).unwrap();
        let (p, r) = mdp.induced(&pi);
        let nu = stationary_distribution(&p).unwrap();
        let d = DMatrix::from_diagonal(&nu);
        let closed = (q.transpose() * &d * &q).lu().solve(&(q.transpose() * &d * r)).unwrap();
        let got = DVector::from_vec(run.theta.clone());
        assert!((got - closed).norm() < 2e-2);
        assert!(run.robbins_monro);
    }

    #[test]
    fn constant_step_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = FiniteMdp::random(4, 2, 0.5, &mut rng);
        let f = FeatureMap::random(4, 2, 1.0, &mut rng).unwrap();
        let run = run_td0(&mdp, &f, &uniform_policy(4, 2), StepSchedule::Constant(0.01), true, 100.0, 1000, &mut rng).unwrap();
        assert!(!run.robbins_monro);
        assert_eq!(run.trajectory.len(), 100);
    }

    #[test]
    fn non_ergodic_chain_fails_before_running() {
        let p = vec![DMatrix::identity(2, 2)];
        let mdp = FiniteMdp::new(p, DMatrix::zeros(2, 1), 0.5, 1.0).unwrap();
        let f = FeatureMap::new(DMatrix::identity(2, 2), DVector::from_element(2, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let res = run_td0(&mdp, &f, &uniform_policy(2, 1), StepSchedule::Constant(0.1), true, 10.0, 10, &mut rng);
        assert!(matches!(res, Err(Error::NotErgodic(_))));
    }

    #[test]
    fn zero_theta_zero_reward_has_zero_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 4;
        let rep = semi_gradient_variance(
            |r: &mut ChaCha8Rng| DVector::from_fn(d, |_, _| StandardNormal.sample(r)),
            &DVector::zeros(d),
            0.99,
            0.0,
            &DVector::from_element(d, 1.0),
            1000,
            &mut rng,
        );
        assert_eq!(rep.empirical_plain, 0.0);
        assert_eq!(rep.empirical_tanh, 0.0);
    }

    #[test]
    fn identity_w_tanh_bound_is_pointwise_tighter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 5;
        let theta = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let rep = semi_gradient_variance(
            |r: &mut ChaCha8Rng| DVector::from_fn(d, |_, _| StandardNormal.sample(r)),
            &theta,
            0.9,
            1.0,
            &DVector::from_element(d, 1.0),
            2000,
            &mut rng,
        );
        assert_eq!(rep.tanh_bound_violations, 0);
        assert_eq!(rep.pointwise_violations, 0);
    }
}
