use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};

/// Singular values below `RANK_TOL * sigma_max` count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Feature matrix `phi` (one row per state) and positive diagonal `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub phi: DMatrix<f64>,
    pub w: DVector<f64>,
}

impl FeatureMap {
    pub fn new(phi: DMatrix<f64>, w: DVector<f64>) -> Result<Self> {
        if w.len() != phi.ncols() || w.iter().any(|&x| x.is_nan() || x <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "W needs {} strictly positive diagonal entries",
                phi.ncols()
            )));
        }
        let rank = numerical_rank(&phi);
        if rank < phi.ncols() {
            return Err(Error::InvalidInput(format!(
                "feature matrix has rank {rank} < {} columns",
                phi.ncols()
            )));
        }
        Ok(Self { phi, w })
    }

    /// Gaussian `states x d` features with `W = c I`.
    pub fn random<R: Rng + ?Sized>(states: usize, d: usize, c: f64, rng: &mut R) -> Result<Self> {
        Self::new(gaussian_matrix(states, d, rng), DVector::from_element(d, c))
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    /// `tanh(W phi(s))` for every state.
    pub fn transformed(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.phi.nrows(), self.phi.ncols(), |i, j| {
            (self.w[j] * self.phi[(i, j)]).tanh()
        })
    }

    /// Feature matrix actually used by TD: transformed or raw.
    pub fn matrix(&self, use_tanh: bool) -> DMatrix<f64> {
        if use_tanh {
            self.transformed()
        } else {
            self.phi.clone()
        }
    }
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().svd(false, false).singular_values
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = singular_values(m);
    let top = sv.max();
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub rank_before: usize,
    pub rank_after: usize,
    pub min_singular_before: f64,
    pub min_singular_after: f64,
}

/// Numerical rank of `phi` and of the elementwise `tanh(c phi)`.
pub fn check_linear_independence(phi: &DMatrix<f64>, c: f64) -> RankReport {
    let after = phi.map(|x| (c * x).tanh());
    RankReport {
        rank_before: numerical_rank(phi),
        rank_after: numerical_rank(&after),
        min_singular_before: singular_values(phi).min(),
        min_singular_after: singular_values(&after).min(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_block_keeps_rank() {
        let mut phi = DMatrix::zeros(8, 4);
        for i in 0..4 {
            phi[(i, i)] = 1.0;
            phi[(i + 4, i)] = -2.0;
        }
        for c in [0.01, 0.5, 0.99] {
            let r = check_linear_independence(&phi, c);
            assert_eq!((r.rank_before, r.rank_after), (4, 4));
        }
    }

    #[test]
    fn random_matrix_keeps_rank_at_small_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let phi = gaussian_matrix(20, 6, &mut rng);
        let r = check_linear_independence(&phi, 0.01);
        assert_eq!((r.rank_before, r.rank_after), (6, 6));
    }

    #[test]
    fn saturation_is_only_reported() {
        // rows of constant sign saturate to +-1 at large c
        let phi = DMatrix::from_row_slice(3, 2, &[50.0, 60.0, -70.0, -80.0, 90.0, 100.0]);
        let r = check_linear_independence(&phi, 10.0);
        assert_eq!(r.rank_before, 2);
        assert_eq!(r.rank_after, 1);
    }

    #[test]
    fn rank_deficient_features_are_rejected() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(FeatureMap::new(phi, DVector::from_element(2, 1.0)).is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(FeatureMap::new(ok, DVector::from_vec(vec![1.0, 0.0])).is_err());
    }
}
