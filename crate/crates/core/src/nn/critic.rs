use ndarray::Array2;
use rand::Rng;

use super::{init_weight, Activation, InitScheme, ParamId, ParamStore};
use crate::autodiff::{Tape, Var, AVG_RNORM_EPS, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Shape and ablation switches of a [`CriticNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct CriticConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: usize,
    /// Number of down layers, equal to the number of up layers.
    pub depth: usize,
    /// Target mean absolute value after `AvgRNorm`.
    pub c: f64,
    pub activation: Activation,
    /// LayerNorm in the first layer. Body LayerNorms are always present.
    pub layer_norm: bool,
    pub skip: bool,
    pub init: InitScheme,
}

impl CriticConfig {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: usize, depth: usize) -> Self {
        Self {
            obs_dim,
            act_dim,
            hidden,
            depth,
            c: 0.1,
            activation: Activation::Tanh,
            layer_norm: true,
            skip: true,
            init: InitScheme::UniformFanIn,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.act_dim
    }

    /// Exact parameter count:
    /// first linear and LayerNorm, `depth` down blocks of one linear and one
    /// LayerNorm, `depth` up blocks of two linears and one LayerNorm, scalar head.
    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        let linear = |i: usize, o: usize| i * o + o;
        let ln = 2 * h;
        let first = linear(self.input_dim(), h) + if self.layer_norm { ln } else { 0 };
        let down = linear(h, h) + ln;
        let up = 2 * linear(h, h) + ln;
        first + self.depth * (down + up) + linear(h, 1)
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim() == 0 || self.hidden < 2 {
            return Err(Error::Config(format!(
                "critic needs a non-empty input and hidden >= 2, got input {} hidden {}",
                self.input_dim(),
                self.hidden
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("c must be positive, got {}", self.c)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct UpBlock {
    inner: Dense,
    norm: Norm,
    outer: Dense,
}

/// Critic with a constrained first layer and a U-shaped residual body.
#[derive(Debug, Clone)]
pub struct CriticNet<T: Scalar> {
    config: CriticConfig,
    pub params: ParamStore<T>,
    first: Dense,
    first_norm: Option<Norm>,
    down: Vec<(Dense, Norm)>,
    up: Vec<UpBlock>,
    head: Dense,
}

/// Intermediate activations of one critic evaluation.
#[derive(Debug, Clone)]
pub struct CriticTrace {
    /// Constrained first-layer representation.
    pub z: Var,
    /// Down-pass outputs `x^1..x^L`.
    pub down: Vec<Var>,
    /// Up-pass outputs `x^{L+1}..x^{2L}`.
    pub up: Vec<Var>,
    /// `B x 1` values.
    pub q: Var,
}

impl<T: Scalar> CriticNet<T> {
    pub fn new<R: Rng + ?Sized>(config: CriticConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let mut params = ParamStore::new();
        let dense = |params: &mut ParamStore<T>, name: &str, o: usize, i: usize, rng: &mut R| {
            let (w, b) = init_weight(o, i, config.init, rng);
            Dense {
                w: params.add(format!("{name}.w"), w),
                b: params.add(format!("{name}.b"), b),
            }
        };
        let norm = |params: &mut ParamStore<T>, name: &str| Norm {
            gamma: params.add(format!("{name}.gamma"), Array2::ones((1, h))),
            beta: params.add(format!("{name}.beta"), Array2::zeros((1, h))),
        };

        let first = dense(&mut params, "first", h, config.input_dim(), rng);
        let first_norm = config.layer_norm.then(|| norm(&mut params, "first.ln"));
        let mut down = Vec::with_capacity(config.depth);
        for l in 1..=config.depth {
            let d = dense(&mut params, &format!("down{l}"), h, h, rng);
            down.push((d, norm(&mut params, &format!("down{l}.ln"))));
        }
        let mut up = Vec::with_capacity(config.depth);
        for l in 1..=config.depth {
            let inner = dense(&mut params, &format!("up{l}.inner"), h, h, rng);
            let n = norm(&mut params, &format!("up{l}.ln"));
            let outer = dense(&mut params, &format!("up{l}.outer"), h, h, rng);
            up.push(UpBlock {
                inner,
                norm: n,
                outer,
            });
        }
        let head = dense(&mut params, "head", 1, h, rng);
        debug_assert_eq!(params.num_scalars(), config.param_count());
        Ok(Self {
            config,
            params,
            first,
            first_norm,
            down,
            up,
            head,
        })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    /// Put parameters on `tape`, trainable or frozen.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>, trainable: bool) -> Vec<Var> {
        self.params.bind(tape, trainable)
    }

    fn dense(&self, tape: &mut Tape<'_, T>, vars: &[Var], d: Dense, x: Var) -> Result<Var> {
        tape.linear(x, vars[d.w.0], vars[d.b.0])
    }

    fn norm(&self, tape: &mut Tape<'_, T>, vars: &[Var], n: Norm, x: Var) -> Result<Var> {
        tape.layer_norm(x, Some((vars[n.gamma.0], vars[n.beta.0])), T::of(LAYER_NORM_EPS))
    }

    /// `act(AvgRNorm(LayerNorm(Linear(o))))` for a batch `o` of `[s; a]` rows.
    pub fn constrain_initial(&self, tape: &mut Tape<'_, T>, vars: &[Var], o: Var) -> Result<Var> {
        if let Some((i, j)) = first_non_finite(tape.value(o)) {
            return Err(Error::InvalidInput(format!(
                "critic input is not finite at row {i}, column {j}"
            )));
        }
        let mut x = self.dense(tape, vars, self.first, o)?;
        if let Some(n) = self.first_norm {
            x = self.norm(tape, vars, n, x)?;
        }
        x = tape.avg_rnorm(x, T::of(self.config.c), T::of(AVG_RNORM_EPS));
        Ok(match self.config.activation {
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Softmax => tape.softmax(x),
            Activation::LayerNorm => tape.layer_norm(x, None, T::of(LAYER_NORM_EPS))?,
            Activation::None => x,
        })
    }

    /// Full evaluation keeping every hidden activation.
    pub fn forward_trace(&self, tape: &mut Tape<'_, T>, vars: &[Var], o: Var) -> Result<CriticTrace> {
        let in_dim = tape.value(o).ncols();
        if in_dim != self.config.input_dim() {
            return Err(Error::Shape {
                op: "critic input",
                left: tape.value(o).dim(),
                right: (1, self.config.input_dim()),
            });
        }
        let z = self.constrain_initial(tape, vars, o)?;
        let mut down = Vec::with_capacity(self.down.len());
        let mut x = z;
        for &(d, n) in &self.down {
            let pre = self.dense(tape, vars, d, x)?;
            let normed = self.norm(tape, vars, n, pre)?;
            x = tape.elu(normed);
            down.push(x);
        }
        // up layer l consumes x^{2L-l} and adds the down output x^l
        let mut up = Vec::with_capacity(self.up.len());
        for l in (1..=self.up.len()).rev() {
            let block = self.up[l - 1];
            let a = self.dense(tape, vars, block.inner, x)?;
            let a = self.norm(tape, vars, block.norm, a)?;
            let a = tape.elu(a);
            let branch = self.dense(tape, vars, block.outer, a)?;
            x = if self.config.skip {
                tape.add(down[l - 1], branch)?
            } else {
                branch
            };
            up.push(x);
        }
        let q = self.dense(tape, vars, self.head, x)?;
        Ok(CriticTrace { z, down, up, q })
    }

    /// `B x 1` Q values for the batch `o`.
    pub fn forward(&self, tape: &mut Tape<'_, T>, vars: &[Var], o: Var) -> Result<Var> {
        Ok(self.forward_trace(tape, vars, o)?.q)
    }

    /// Q values for state and action batches without keeping a graph.
    pub fn evaluate(&self, s: &Array2<T>, a: &Array2<T>) -> Result<Array2<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let sv = tape.constant_view(s.view());
        let av = tape.constant_view(a.view());
        let o = tape.concat_cols(sv, av)?;
        let q = self.forward(&mut tape, &vars, o)?;
        Ok(tape.value(q).to_owned())
    }

    /// Linear layer handles in parameter order, for tests that rewrite weights.
    pub fn up_outer_weights(&self) -> Vec<ParamId> {
        self.up.iter().map(|u| u.outer.w).collect()
    }

    pub fn up_outer_biases(&self) -> Vec<ParamId> {
        self.up.iter().map(|u| u.outer.b).collect()
    }

    pub fn first_layer(&self) -> (ParamId, ParamId) {
        (self.first.w, self.first.b)
    }
}

fn first_non_finite<T: Scalar>(v: ndarray::ArrayView2<'_, T>) -> Option<(usize, usize)> {
    v.indexed_iter()
        .find(|(_, e)| !e.is_finite_value())
        .map(|(ix, _)| ix)
}
