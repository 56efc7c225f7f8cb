use ndarray::Array2;

use super::tape::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(parameter index, flat element index)` of the worst element.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Compare the tape gradient of a scalar function against central
/// differences with step `eps`. Relative error per element is
/// `|a - n| / max(|a|, |n|, eps)`.
///
/// `f` receives a fresh tape and one trainable leaf per entry of `params`.
pub fn grad_check<T, F>(f: F, params: &[Array2<T>], eps: T) -> Result<GradCheckReport>
where
    T: Scalar,
    F: for<'t> Fn(&mut Tape<'t, T>, &[Var]) -> Result<Var>,
{
    let analytic: Vec<Array2<T>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.view())).collect();
        let loss = f(&mut tape, &vars)?;
        tape.backward(loss)?;
        vars.iter().map(|&v| tape.grad_or_zeros(v)).collect()
    };

    let eval = |ps: &[Array2<T>]| -> Result<T> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant_view(p.view())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };

    let analytic: Vec<Vec<T>> = analytic.iter().map(|g| g.iter().copied().collect()).collect();
    let mut work: Vec<Array2<T>> = params
        .iter()
        .map(|p| p.as_standard_layout().into_owned())
        .collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let two_eps = eps + eps;
    #[allow(clippy::needless_range_loop)]
    for pi in 0..work.len() {
        for ei in 0..work[pi].len() {
            let orig = flat(&mut work[pi])[ei];
            flat(&mut work[pi])[ei] = orig + eps;
            let up = eval(&work)?;
            flat(&mut work[pi])[ei] = orig - eps;
            let down = eval(&work)?;
            flat(&mut work[pi])[ei] = orig;

            let numeric = ((up - down) / two_eps).to_f64();
            let a = analytic[pi][ei].to_f64();
            let denom = a.abs().max(numeric.abs()).max(eps.to_f64());
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel.is_nan() || rel > report.max_rel_err {
                report.max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = Some((pi, ei));
            }
        }
    }
    Ok(report)
}

fn flat<T: Scalar>(a: &mut Array2<T>) -> &mut [T] {
    a.as_slice_mut().expect("standard layout")
}
