use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-parameter Adam moments with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub first_moment: Vec<Array2<T>>,
    pub second_moment: Vec<Array2<T>>,
    pub step_count: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state with the usual `(0.9, 0.999, 1e-8)` constants.
    pub fn new<'p>(params: impl IntoIterator<Item = &'p Array2<T>>) -> Self {
        let first_moment: Vec<_> = params
            .into_iter()
            .map(|p| Array2::zeros(p.dim()))
            .collect();
        Self {
            second_moment: first_moment.clone(),
            first_moment,
            step_count: 0,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
        }
    }

    /// One bias-corrected Adam update. Nothing is modified if any gradient
    /// is non-finite; the error names the offending parameter.
    pub fn step(
        &mut self,
        params: &mut [Array2<T>],
        grads: &[Array2<T>],
        names: &[String],
        lr: T,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::InvalidInput(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        if lr <= T::zero() {
            return Err(Error::InvalidInput(format!("adam: learning rate {lr} must be positive")));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != g.dim() || p.dim() != self.first_moment[i].dim() {
                return Err(Error::Shape {
                    op: "adam",
                    left: p.dim(),
                    right: g.dim(),
                });
            }
            if g.iter().any(|v| !v.is_finite_value()) {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::NonFiniteGradient { name });
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}
