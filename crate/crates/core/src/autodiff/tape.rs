//! Define-by-run reverse-mode tape over rank-2 arrays.
//!
//! Every value is a `rows x cols` matrix; a batch of vectors is one row per
//! sample and a scalar is `1 x 1`. Nodes are appended in evaluation order, so
//! the node index is already a topological order and [`Tape::backward`] is a
//! single reverse sweep.
//!
//! Parameters are borrowed into the tape without copying (`CowArray` views);
//! the tape must be dropped before the parameters are updated in place.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, CowArray, Ix2, Zip};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise local derivative `d y / d x` given `(x, y)`.
pub type LocalDerivative<'a, T> = Box<dyn Fn(T, T) -> T + 'a>;

enum Op<'a, T: Scalar> {
    Leaf,
    Linear { x: usize, w: usize, b: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Tanh(usize),
    Elu(usize),
    Sigmoid(usize),
    Softmax(usize),
    Exp(usize),
    Softplus(usize),
    Square(usize),
    Clamp { x: usize, lo: T, hi: T },
    Map { x: usize, deriv: LocalDerivative<'a, T> },
    LayerNorm {
        x: usize,
        affine: Option<(usize, usize)>,
        normalized: Array2<T>,
        inv_std: Array1<T>,
    },
    AvgRNorm {
        x: usize,
        c: T,
        denom: Array1<T>,
        guarded: Vec<bool>,
    },
    SumRows(usize),
    Sum(usize),
    Mean(usize),
    ConcatCols(usize, usize),
}

struct Node<'a, T: Scalar> {
    value: CowArray<'a, T, Ix2>,
    op: Op<'a, T>,
    requires_grad: bool,
}

/// Computation graph for one forward/backward pass.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    grads: Vec<Option<Array2<T>>>,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims<T>(a: &ArrayView2<T>) -> (usize, usize) {
    a.dim()
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: CowArray<'a, T, Ix2>, op: Op<'a, T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, value: Array2<T>, op: Op<'a, T>) -> Var {
        let rg = self.nodes[x.0].requires_grad;
        self.push(value.into(), op, rg)
    }

    /// Trainable leaf borrowing `value`.
    pub fn param(&mut self, value: ArrayView2<'a, T>) -> Var {
        self.push(value.into(), Op::Leaf, true)
    }

    /// Non-trainable leaf borrowing `value`.
    pub fn constant_view(&mut self, value: ArrayView2<'a, T>) -> Var {
        self.push(value.into(), Op::Leaf, false)
    }

    /// Leaf owning `value`.
    pub fn leaf(&mut self, value: Array2<T>, requires_grad: bool) -> Var {
        self.push(value.into(), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `x`'s value with no path back into the graph.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.to_owned();
        self.constant(v)
    }

    pub fn value(&self, x: Var) -> ArrayView2<'_, T> {
        self.nodes[x.0].value.view()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, x: Var) -> T {
        self.nodes[x.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes[x.0].requires_grad
    }

    /// Accumulated gradient, `None` if no backward pass reached `x`.
    pub fn grad(&self, x: Var) -> Option<&Array2<T>> {
        self.grads[x.0].as_ref()
    }

    /// Gradient of `x`, zeros if it was never reached.
    pub fn grad_or_zeros(&self, x: Var) -> Array2<T> {
        match &self.grads[x.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.nodes[x.0].value.dim()),
        }
    }

    pub fn take_grad(&mut self, x: Var) -> Array2<T> {
        let dim = self.nodes[x.0].value.dim();
        self.grads[x.0]
            .take()
            .unwrap_or_else(|| Array2::zeros(dim))
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    // ---- forward ops ----

    /// `x W^T + b` for a batch `x` (rows), weight `W` (out x in) and bias
    /// `b` (1 x out).
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xv = self.nodes[x.0].value.view();
        let wv = self.nodes[w.0].value.view();
        let bv = self.nodes[b.0].value.view();
        if xv.ncols() != wv.ncols() {
            return Err(Error::Shape {
                op: "linear",
                left: dims(&xv),
                right: dims(&wv),
            });
        }
        if bv.dim() != (1, wv.nrows()) {
            return Err(Error::Shape {
                op: "linear bias",
                left: dims(&wv),
                right: dims(&bv),
            });
        }
        let mut out = Array2::zeros((xv.nrows(), wv.nrows()));
        general_mat_mul(T::one(), &xv, &wv.t(), T::zero(), &mut out);
        out += &bv;
        let rg = self.nodes[x.0].requires_grad
            || self.nodes[w.0].requires_grad
            || self.nodes[b.0].requires_grad;
        Ok(self.push(
            out.into(),
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.0,
            },
            rg,
        ))
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<'a, T>,
    ) -> Result<Var> {
        let av = self.nodes[a.0].value.view();
        let bv = self.nodes[b.0].value.view();
        if av.dim() != bv.dim() {
            return Err(Error::Shape {
                op: op_name,
                left: av.dim(),
                right: bv.dim(),
            });
        }
        let out = Zip::from(&av).and(&bv).map_collect(|&p, &q| f(p, q));
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(out.into(), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |p, q| p + q, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |p, q| p - q, Op::Sub(a.0, b.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |p, q| p * q, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| e * k);
        self.unary(x, v, Op::Scale(x.0, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: T) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| e + k);
        self.unary(x, v, Op::AddScalar(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| e.tanh());
        self.unary(x, v, Op::Tanh(x.0))
    }

    /// `elu` with unit scale.
    pub fn elu(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0]
            .value
            .mapv(|e| if e > T::zero() { e } else { e.exp_m1() });
        self.unary(x, v, Op::Elu(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(sigmoid);
        self.unary(x, v, Op::Sigmoid(x.0))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut v = self.nodes[x.0].value.to_owned();
        for mut row in v.rows_mut() {
            let m = row.iter().fold(row[0], |a, &b| a.max(b));
            row.mapv_inplace(|e| (e - m).exp());
            let s = row.sum();
            row.mapv_inplace(|e| e / s);
        }
        self.unary(x, v, Op::Softmax(x.0))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| e.exp());
        self.unary(x, v, Op::Exp(x.0))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(softplus);
        self.unary(x, v, Op::Softplus(x.0))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| e * e);
        self.unary(x, v, Op::Square(x.0))
    }

    /// Clamp into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| e.max(lo).min(hi));
        self.unary(x, v, Op::Clamp { x: x.0, lo, hi })
    }

    /// Elementwise map with a caller-supplied local derivative `deriv(x, y)`.
    pub fn map(
        &mut self,
        x: Var,
        f: impl Fn(T) -> T,
        deriv: impl Fn(T, T) -> T + 'a,
    ) -> Var {
        let v = self.nodes[x.0].value.mapv(f);
        self.unary(
            x,
            v,
            Op::Map {
                x: x.0,
                deriv: Box::new(deriv),
            },
        )
    }

    /// Row-wise layer normalization with optional per-feature `(scale, shift)`.
    pub fn layer_norm(&mut self, x: Var, affine: Option<(Var, Var)>, eps: T) -> Result<Var> {
        let xv = self.nodes[x.0].value.view();
        let (rows, n) = xv.dim();
        if n < 2 {
            return Err(Error::TooFewFeatures {
                op: "layer_norm",
                min: 2,
                got: n,
            });
        }
        if let Some((g, b)) = affine {
            for p in [g, b] {
                let pd = self.nodes[p.0].value.dim();
                if pd != (1, n) {
                    return Err(Error::Shape {
                        op: "layer_norm affine",
                        left: (rows, n),
                        right: pd,
                    });
                }
            }
        }
        let nf = T::of(n as f64);
        let mut normalized = xv.to_owned();
        let mut inv_std = Array1::zeros(rows);
        for (mut row, inv) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / nf;
            row.mapv_inplace(|e| e - mean);
            let var = row.fold(T::zero(), |a, &e| a + e * e) / nf;
            let s = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|e| e * s);
            *inv = s;
        }
        let mut out = normalized.clone();
        let mut rg = self.nodes[x.0].requires_grad;
        if let Some((g, b)) = affine {
            out *= &self.nodes[g.0].value;
            out += &self.nodes[b.0].value;
            rg = rg || self.nodes[g.0].requires_grad || self.nodes[b.0].requires_grad;
        }
        Ok(self.push(
            out.into(),
            Op::LayerNorm {
                x: x.0,
                affine: affine.map(|(g, b)| (g.0, b.0)),
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Row-wise `c * x / mean(|x|)`. Rows with `mean(|x|) < eps` divide by
    /// `eps` instead and do not differentiate through the denominator.
    pub fn avg_rnorm(&mut self, x: Var, c: T, eps: T) -> Var {
        let xv = self.nodes[x.0].value.view();
        let rows = xv.nrows();
        let nf = T::of(xv.ncols().max(1) as f64);
        let mut out = xv.to_owned();
        let mut denom = Array1::zeros(rows);
        let mut guarded = vec![false; rows];
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let m = row.fold(T::zero(), |a, &e| a + e.abs()) / nf;
            let d = if m < eps {
                guarded[i] = true;
                eps
            } else {
                m
            };
            denom[i] = d;
            let k = c / d;
            row.mapv_inplace(|e| e * k);
        }
        self.unary(
            x,
            out,
            Op::AvgRNorm {
                x: x.0,
                c,
                denom,
                guarded,
            },
        )
    }

    /// Sum of each row, `B x n -> B x 1`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.unary(x, v, Op::SumRows(x.0))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.sum();
        self.unary(x, Array2::from_elem((1, 1), s), Op::Sum(x.0))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let s = v.sum() / T::of(v.len().max(1) as f64);
        self.unary(x, Array2::from_elem((1, 1), s), Op::Mean(x.0))
    }

    /// `[a | b]` along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.nodes[a.0].value.view();
        let bv = self.nodes[b.0].value.view();
        if av.nrows() != bv.nrows() {
            return Err(Error::Shape {
                op: "concat_cols",
                left: av.dim(),
                right: bv.dim(),
            });
        }
        let out = ndarray::concatenate(Axis(1), &[av, bv]).expect("row counts checked");
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(out.into(), Op::ConcatCols(a.0, b.0), rg))
    }

    // ---- reverse sweep ----

    /// Accumulate `d loss / d node` into every trainable node reachable from
    /// `loss`. Gradients add up across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.dim();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut pending: Vec<Option<Array2<T>>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = pending[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut pending);
            match &mut self.grads[i] {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Array2<T>, pending: &mut [Option<Array2<T>>]) {
        let nodes = &self.nodes;
        let wants = |p: usize| nodes[p].requires_grad;
        let val = |p: usize| nodes[p].value.view();
        let y = nodes[i].value.view();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                if wants(*x) {
                    let acc = slot(pending, *x, val(*x).dim());
                    general_mat_mul(T::one(), g, &val(*w), T::one(), acc);
                }
                if wants(*w) {
                    let acc = slot(pending, *w, val(*w).dim());
                    general_mat_mul(T::one(), &g.t(), &val(*x), T::one(), acc);
                }
                if wants(*b) {
                    let acc = slot(pending, *b, val(*b).dim());
                    *acc += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    *slot(pending, *a, g.dim()) += g;
                }
                if wants(*b) {
                    *slot(pending, *b, g.dim()) += g;
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    *slot(pending, *a, g.dim()) += g;
                }
                if wants(*b) {
                    *slot(pending, *b, g.dim()) -= g;
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = val(*b);
                    Zip::from(slot(pending, *a, g.dim()))
                        .and(g)
                        .and(&bv)
                        .for_each(|acc, &gi, &q| *acc += gi * q);
                }
                if wants(*b) {
                    let av = val(*a);
                    Zip::from(slot(pending, *b, g.dim()))
                        .and(g)
                        .and(&av)
                        .for_each(|acc, &gi, &p| *acc += gi * p);
                }
            }
            Op::Scale(x, k) => {
                if wants(*x) {
                    slot(pending, *x, g.dim()).scaled_add(*k, g);
                }
            }
            Op::AddScalar(x) => {
                if wants(*x) {
                    *slot(pending, *x, g.dim()) += g;
                }
            }
            Op::Tanh(x) => elementwise(pending, *x, g, &val(*x), &y, |_, t| T::one() - t * t),
            Op::Elu(x) => elementwise(pending, *x, g, &val(*x), &y, |xi, yi| {
                if xi > T::zero() {
                    T::one()
                } else {
                    yi + T::one()
                }
            }),
            Op::Sigmoid(x) => {
                elementwise(pending, *x, g, &val(*x), &y, |_, s| s * (T::one() - s))
            }
            Op::Exp(x) => elementwise(pending, *x, g, &val(*x), &y, |_, e| e),
            Op::Softplus(x) => elementwise(pending, *x, g, &val(*x), &y, |xi, _| sigmoid(xi)),
            Op::Square(x) => elementwise(pending, *x, g, &val(*x), &y, |xi, _| xi + xi),
            Op::Clamp { x, lo, hi } => elementwise(pending, *x, g, &val(*x), &y, |xi, _| {
                if xi >= *lo && xi <= *hi {
                    T::one()
                } else {
                    T::zero()
                }
            }),
            Op::Map { x, deriv } => elementwise(pending, *x, g, &val(*x), &y, deriv),
            Op::Softmax(x) => {
                if wants(*x) {
                    let acc = slot(pending, *x, g.dim());
                    for ((mut a, gr), yr) in acc.rows_mut().into_iter().zip(g.rows()).zip(y.rows()) {
                        let dot = gr.dot(&yr);
                        Zip::from(&mut a)
                            .and(&gr)
                            .and(&yr)
                            .for_each(|a, &gi, &yi| *a += yi * (gi - dot));
                    }
                }
            }
            Op::LayerNorm {
                x,
                affine,
                normalized,
                inv_std,
            } => {
                let ghat = match affine {
                    Some((gamma, beta)) => {
                        if wants(*gamma) {
                            let acc = slot(pending, *gamma, val(*gamma).dim());
                            *acc += &(g * normalized).sum_axis(Axis(0)).insert_axis(Axis(0));
                        }
                        if wants(*beta) {
                            let acc = slot(pending, *beta, val(*beta).dim());
                            *acc += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        }
                        g * &val(*gamma)
                    }
                    None => g.clone(),
                };
                if wants(*x) {
                    let n = T::of(normalized.ncols() as f64);
                    let acc = slot(pending, *x, g.dim());
                    for (((mut a, gh), xh), &s) in acc
                        .rows_mut()
                        .into_iter()
                        .zip(ghat.rows())
                        .zip(normalized.rows())
                        .zip(inv_std.iter())
                    {
                        let sum_g = gh.sum();
                        let sum_gx = gh.dot(&xh);
                        Zip::from(&mut a).and(&gh).and(&xh).for_each(|a, &gi, &xi| {
                            *a += s / n * (n * gi - sum_g - xi * sum_gx);
                        });
                    }
                }
            }
            Op::AvgRNorm {
                x,
                c,
                denom,
                guarded,
            } => {
                if wants(*x) {
                    let xv = val(*x);
                    let n = T::of(xv.ncols() as f64);
                    let acc = slot(pending, *x, g.dim());
                    for (r, mut a) in acc.rows_mut().into_iter().enumerate() {
                        let d = denom[r];
                        let gr = g.row(r);
                        let xr = xv.row(r);
                        let k = *c / d;
                        let coupling = if guarded[r] {
                            T::zero()
                        } else {
                            *c * gr.dot(&xr) / (n * d * d)
                        };
                        Zip::from(&mut a).and(&gr).and(&xr).for_each(|a, &gi, &xi| {
                            *a += k * gi - coupling * signum(xi);
                        });
                    }
                }
            }
            Op::SumRows(x) => {
                if wants(*x) {
                    let acc = slot(pending, *x, val(*x).dim());
                    for (mut a, gr) in acc.rows_mut().into_iter().zip(g.rows()) {
                        let gi = gr[0];
                        a.mapv_inplace(|e| e + gi);
                    }
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let gi = g[[0, 0]];
                    slot(pending, *x, val(*x).dim()).mapv_inplace(|e| e + gi);
                }
            }
            Op::Mean(x) => {
                if wants(*x) {
                    let dim = val(*x).dim();
                    let gi = g[[0, 0]] / T::of((dim.0 * dim.1).max(1) as f64);
                    slot(pending, *x, dim).mapv_inplace(|e| e + gi);
                }
            }
            Op::ConcatCols(a, b) => {
                let split = val(*a).ncols();
                if wants(*a) {
                    *slot(pending, *a, val(*a).dim()) += &g.slice(ndarray::s![.., ..split]);
                }
                if wants(*b) {
                    *slot(pending, *b, val(*b).dim()) += &g.slice(ndarray::s![.., split..]);
                }
            }
        }
    }
}

fn slot<T: Scalar>(
    pending: &mut [Option<Array2<T>>],
    idx: usize,
    dim: (usize, usize),
) -> &mut Array2<T> {
    pending[idx].get_or_insert_with(|| Array2::zeros(dim))
}

fn elementwise<T: Scalar>(
    pending: &mut [Option<Array2<T>>],
    x: usize,
    g: &Array2<T>,
    xv: &ArrayView2<T>,
    y: &ArrayView2<T>,
    local: impl Fn(T, T) -> T,
) {
    // Callers only reach here for nodes that require grad, and a unary node
    // requires grad iff its input does.
    let acc = slot(pending, x, g.dim());
    Zip::from(acc)
        .and(g)
        .and(xv)
        .and(y)
        .for_each(|a, &gi, &xi, &yi| *a += gi * local(xi, yi));
}

fn signum<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
