use nalgebra::DMatrix;
use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{AdamState, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Weight initialization for linear layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    #[default]
    UniformFanIn,
    /// Orthogonal weights, zero biases.
    Orthogonal,
}

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    values: Vec<Array2<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array2<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.values[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array2<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Register every tensor on `tape`, in store order.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| {
                if trainable {
                    tape.param(v.view())
                } else {
                    tape.constant_view(v.view())
                }
            })
            .collect()
    }

    /// `self <- tau * online + (1 - tau) * self`, elementwise.
    pub fn polyak_from(&mut self, online: &ParamStore<T>, tau: T) -> Result<()> {
        self.check_layout(online)?;
        if tau == T::one() {
            return self.copy_from(online);
        }
        // d + tau (s - d) leaves d untouched when s == d
        for (dst, src) in self.values.iter_mut().zip(&online.values) {
            Zip::from(dst).and(src).for_each(|d, &s| *d += tau * (s - *d));
        }
        Ok(())
    }

    /// One Adam update of every tensor with `grads` in store order.
    pub fn adam_step(&mut self, opt: &mut AdamState<T>, grads: &[Array2<T>], lr: T) -> Result<()> {
        opt.step(&mut self.values, grads, &self.names, lr)
    }

    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        self.check_layout(other)?;
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            dst.assign(src);
        }
        Ok(())
    }

    pub fn check_layout(&self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::InvalidInput("parameter names differ".into()));
        }
        for ((n, a), b) in self.names.iter().zip(&self.values).zip(&other.values) {
            if a.dim() != b.dim() {
                return Err(Error::InvalidInput(format!(
                    "{n}: shape {:?} vs {:?}",
                    a.dim(),
                    b.dim()
                )));
            }
        }
        Ok(())
    }

    /// True when every tensor matches `other` bit for bit.
    pub fn bit_eq(&self, other: &ParamStore<T>) -> bool {
        self.names == other.names
            && self.values.iter().zip(&other.values).all(|(a, b)| {
                a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(p, q)| p.bits() == q.bits())
            })
    }
}

pub(crate) fn init_weight<T: Scalar, R: Rng + ?Sized>(
    out_dim: usize,
    in_dim: usize,
    scheme: InitScheme,
    rng: &mut R,
) -> (Array2<T>, Array2<T>) {
    match scheme {
        InitScheme::UniformFanIn => {
            let bound = 1.0 / (in_dim as f64).sqrt();
            let w = Array2::from_shape_fn((out_dim, in_dim), |_| {
                T::of(rng.random_range(-bound..bound))
            });
            let b = Array2::from_shape_fn((1, out_dim), |_| T::of(rng.random_range(-bound..bound)));
            (w, b)
        }
        InitScheme::Orthogonal => (orthogonal(out_dim, in_dim, rng), Array2::zeros((1, out_dim))),
    }
}

/// Matrix with orthonormal rows (if `rows <= cols`) or columns.
fn orthogonal<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<T> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let g = DMatrix::<T>::from_fn(tall, short, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        T::of(v)
    });
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // Sign fix so the factorization is unique.
    let mut q = q;
    for j in 0..short {
        if r[(j, j)] < T::zero() {
            q.column_mut(j).neg_mut();
        }
    }
    if rows >= cols {
        Array2::from_shape_fn((rows, cols), |(i, j)| q[(i, j)])
    } else {
        Array2::from_shape_fn((rows, cols), |(i, j)| q[(j, i)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (w, b) = init_weight::<f64, _>(16, 9, InitScheme::UniformFanIn, &mut rng);
        assert!(w.iter().chain(b.iter()).all(|v| v.abs() <= 1.0 / 3.0));
        assert_eq!(w.dim(), (16, 9));
        assert_eq!(b.dim(), (1, 16));
    }

    #[test]
    fn orthogonal_init_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (r, c) in [(8, 5), (5, 8), (6, 6)] {
            let (w, b) = init_weight::<f64, _>(r, c, InitScheme::Orthogonal, &mut rng);
            let gram = if r >= c { w.t().dot(&w) } else { w.dot(&w.t()) };
            let n = r.min(c);
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[[i, j]] - want).abs() < 1e-12);
                }
            }
            assert!(b.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn polyak_extremes() {
        let mut a = ParamStore::<f64>::new();
        a.add("w", ndarray::array![[1.0, 2.0]]);
        let mut b = ParamStore::<f64>::new();
        b.add("w", ndarray::array![[5.0, -3.0]]);
        let mut t = b.clone();
        t.polyak_from(&a, 1.0).unwrap();
        assert!(t.bit_eq(&a));
        let mut same = a.clone();
        same.polyak_from(&a, 0.005).unwrap();
        assert!(same.bit_eq(&a));
    }
}
