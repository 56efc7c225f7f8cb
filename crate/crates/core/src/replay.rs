//! Ring-buffer experience replay with uniform sampling.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One `(s, a, r, s', done)` record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub s: Vec<T>,
    pub a: Vec<T>,
    pub r: T,
    pub s2: Vec<T>,
    /// Terminal flag; time-limit truncations are stored as `false`.
    pub done: bool,
}

/// Sampled mini-batch, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T: Scalar> {
    pub s: Array2<T>,
    pub a: Array2<T>,
    /// `B x 1`.
    pub r: Array2<T>,
    pub s2: Array2<T>,
    /// `B x 1`, 1 for terminal transitions.
    pub done: Array2<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.s.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.s.nrows() == 0
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    s: Vec<T>,
    a: Vec<T>,
    r: Vec<T>,
    s2: Vec<T>,
    done: Vec<bool>,
    /// Slot overwritten by the next insertion once full.
    next: usize,
    len: usize,
}

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            obs_dim,
            act_dim,
            s: Vec::new(),
            a: Vec::new(),
            r: Vec::new(),
            s2: Vec::new(),
            done: Vec::new(),
            next: 0,
            len: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn add(&mut self, t: Transition<T>) -> Result<()> {
        if t.s.len() != self.obs_dim || t.s2.len() != self.obs_dim || t.a.len() != self.act_dim {
            return Err(Error::InvalidInput(format!(
                "transition dims s {} a {} s' {}, buffer expects obs {} act {}",
                t.s.len(),
                t.a.len(),
                t.s2.len(),
                self.obs_dim,
                self.act_dim
            )));
        }
        let finite = t.s.iter().chain(&t.a).chain(&t.s2).all(|v| v.is_finite_value());
        if !finite || !t.r.is_finite_value() {
            return Err(Error::NonFinite {
                context: "replay transition".into(),
            });
        }
        if self.len < self.capacity {
            self.s.extend_from_slice(&t.s);
            self.a.extend_from_slice(&t.a);
            self.r.push(t.r);
            self.s2.extend_from_slice(&t.s2);
            self.done.push(t.done);
            self.len += 1;
        } else {
            let i = self.next;
            let (o, k) = (self.obs_dim, self.act_dim);
            self.s[i * o..(i + 1) * o].copy_from_slice(&t.s);
            self.a[i * k..(i + 1) * k].copy_from_slice(&t.a);
            self.r[i] = t.r;
            self.s2[i * o..(i + 1) * o].copy_from_slice(&t.s2);
            self.done[i] = t.done;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// Stored transition at slot `i`.
    pub fn get(&self, i: usize) -> Option<Transition<T>> {
        if i >= self.len {
            return None;
        }
        let (o, k) = (self.obs_dim, self.act_dim);
        Some(Transition {
            s: self.s[i * o..(i + 1) * o].to_vec(),
            a: self.a[i * k..(i + 1) * k].to_vec(),
            r: self.r[i],
            s2: self.s2[i * o..(i + 1) * o].to_vec(),
            done: self.done[i],
        })
    }

    /// `n` slot indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.len == 0 {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..n).map(|_| rng.random_range(0..self.len)).collect())
    }

    pub fn gather(&self, idx: &[usize]) -> Batch<T> {
        let (o, k) = (self.obs_dim, self.act_dim);
        let n = idx.len();
        let rows = |src: &[T], w: usize| {
            Array2::from_shape_fn((n, w), |(r, c)| src[idx[r] * w + c])
        };
        Batch {
            s: rows(&self.s, o),
            a: rows(&self.a, k),
            r: Array2::from_shape_fn((n, 1), |(r, _)| self.r[idx[r]]),
            s2: rows(&self.s2, o),
            done: Array2::from_shape_fn((n, 1), |(r, _)| {
                if self.done[idx[r]] {
                    T::one()
                } else {
                    T::zero()
                }
            }),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch<T>> {
        let idx = self.sample_indices(n, rng)?;
        Ok(self.gather(&idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(k: f64) -> Transition<f64> {
        Transition {
            s: vec![k, k + 0.5],
            a: vec![-k / 7.0],
            r: k * 0.1,
            s2: vec![k + 1.0, k + 1.5],
            done: k as i64 % 2 == 1,
        }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut b = ReplayBuffer::new(3, 2, 1).unwrap();
        for k in 0..4 {
            b.add(tr(k as f64)).unwrap();
        }
        assert_eq!(b.len(), 3);
        let stored: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().r).collect();
        assert!(!stored.contains(&0.0));
        assert_eq!(b.get(0).unwrap(), tr(3.0));
    }

    #[test]
    fn empty_buffer_cannot_sample() {
        let b = ReplayBuffer::<f64>::new(3, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.sample(4, &mut rng), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn batch_preserves_bits() {
        let mut b = ReplayBuffer::new(10, 2, 1).unwrap();
        for k in 0..10 {
            b.add(tr(k as f64 + 1.0 / 3.0)).unwrap();
        }
        let batch = b.gather(&[7, 2, 7]);
        for (row, &i) in [7usize, 2, 7].iter().enumerate() {
            let t = tr(i as f64 + 1.0 / 3.0);
            assert_eq!(batch.s.row(row).to_vec(), t.s);
            assert_eq!(batch.a.row(row).to_vec(), t.a);
            assert_eq!(batch.s2.row(row).to_vec(), t.s2);
            assert_eq!(batch.r[[row, 0]].to_bits(), t.r.to_bits());
            assert_eq!(batch.done[[row, 0]], if t.done { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn sampling_is_uniform() {
        let n = 50;
        let mut b = ReplayBuffer::new(n, 2, 1).unwrap();
        for k in 0..n {
            b.add(tr(k as f64)).unwrap();
        }
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = vec![0usize; n];
        for i in b.sample_indices(draws, &mut rng).unwrap() {
            counts[i] += 1;
        }
        let expected = draws as f64 / n as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9% quantile of chi-square with 49 degrees of freedom
        assert!(chi2 < 85.35, "chi2 = {chi2}");
    }

    #[test]
    fn rejects_bad_transitions() {
        let mut b = ReplayBuffer::new(4, 2, 1).unwrap();
        let mut t = tr(1.0);
        t.a = vec![0.0, 0.0];
        assert!(matches!(b.add(t), Err(Error::InvalidInput(_))));
        let mut t = tr(1.0);
        t.r = f64::NAN;
        assert!(matches!(b.add(t), Err(Error::NonFinite { .. })));
        assert!(b.is_empty());
    }
}
