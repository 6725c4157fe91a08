//! Central self-attention over sliding windows, and conventional global
//! self-attention for the last stage.
//!
//! Both modules project every token with `W^Q`, `W^K`, `W^V` (plus biases),
//! split the projections into `heads` contiguous column blocks, attend per
//! head, concatenate and apply `W^O`. Central attention draws its keys and
//! values from the zero-padded `k×k` window around each query token, so the
//! padding contributes zero keys and zero values.

pub mod kernels;
pub mod window;

pub use kernels::{attention_backward, attention_forward, central_attention_backward, central_attention_forward};
pub use window::{unfold_windows, unfold_windows_backward, window_count, WindowSpec};

use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::numerics::{Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Handles to one attention module's projections.
#[derive(Debug, Clone)]
pub struct AttentionParams<T> {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bq: ParamId,
    pub bk: ParamId,
    pub bv: ParamId,
    pub bo: ParamId,
    pub heads: usize,
    pub width: usize,
    /// Optional additive `[N, N]` logit bias for global attention.
    pub pos_bias: Option<Tensor<T>>,
}

impl<T: Scalar> AttentionParams<T> {
    /// Registers `{prefix}.{q,k,v,o}.{weight,bias}`; weights are `[d_in, d_out]`.
    pub fn register(
        store: &mut ParamStore<T>,
        prefix: &str,
        width: usize,
        heads: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{prefix}: width {width} is not divisible by {heads} heads"
            )));
        }
        let mut proj = |name: &str| {
            let w = store.register(format!("{prefix}.{name}.weight"), init.trunc_normal(&[width, width]));
            let b = store.register(format!("{prefix}.{name}.bias"), Tensor::zeros([width]));
            (w, b)
        };
        let (wq, bq) = proj("q");
        let (wk, bk) = proj("k");
        let (wv, bv) = proj("v");
        let (wo, bo) = proj("o");
        Ok(Self {
            wq,
            wk,
            wv,
            wo,
            bq,
            bk,
            bv,
            bo,
            heads,
            width,
            pos_bias: None,
        })
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    fn project(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<(Var, Var, Var)> {
        let d = tape.value(x).last_dim();
        if d != self.width {
            return Err(Error::Dimension {
                op: "attention input",
                lhs: tape.value(x).shape().to_vec(),
                rhs: vec![self.width],
            });
        }
        let mut lin = |w: ParamId, b: ParamId| {
            let (w, b) = (tape.param(w), tape.param(b));
            tape.linear(x, w, b)
        };
        Ok((lin(self.wq, self.bq)?, lin(self.wk, self.bk)?, lin(self.wv, self.bv)?))
    }

    fn output(&self, tape: &mut Tape<'_, T>, heads_out: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.wo), tape.param(self.bo));
        tape.linear(heads_out, w, b)
    }

    /// Multi-head central self-attention on a recorded tape.
    pub fn mcsa(&self, tape: &mut Tape<'_, T>, x: Var, spec: WindowSpec) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::Geometry(format!("mcsa expects [H, W, C], got {shape:?}")));
        }
        let (h, w) = (shape[0], shape[1]);
        let counted = window_count(h, w, spec)?;
        if counted != (h, w) {
            return Err(Error::Geometry(format!(
                "window {spec:?} maps a {h}×{w} map to {}×{} windows; blocks must preserve resolution",
                counted.0, counted.1
            )));
        }
        let (q, k, v) = self.project(tape, x)?;
        let heads = tape.central_attention(q, (k, v), self.heads, spec)?;
        self.output(tape, heads)
    }

    /// Multi-head global self-attention over all tokens of the map.
    pub fn msa(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let (q, k, v) = self.project(tape, x)?;
        let heads = tape.attention(q, (k, v), self.heads, self.pos_bias.as_ref())?;
        self.output(tape, heads)
    }
}

/// Central self-attention for one query: `softmax(q·Kᵀ/√d̂)·V`.
///
/// `q` is `[1, d̂]`, `keys` and `values` are `[n, d̂]`.
pub fn csa<T: Scalar>(q: &Tensor<T>, keys: &Tensor<T>, values: &Tensor<T>) -> Result<Tensor<T>> {
    if q.shape() != [1, keys.last_dim()] {
        return Err(Error::Dimension {
            op: "csa",
            lhs: q.shape().to_vec(),
            rhs: keys.shape().to_vec(),
        });
    }
    Ok(attention_forward(q, keys, values, 1, None)?.0)
}

/// Conventional self-attention `softmax(QKᵀ/√d̂ + B)·V` for one head.
pub fn sa_global<T: Scalar>(
    q: &Tensor<T>,
    keys: &Tensor<T>,
    values: &Tensor<T>,
    pos_bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if q.shape() != keys.shape() {
        return Err(Error::Dimension {
            op: "sa_global",
            lhs: q.shape().to_vec(),
            rhs: keys.shape().to_vec(),
        });
    }
    Ok(attention_forward(q, keys, values, 1, pos_bias)?.0)
}

/// Evaluates [`AttentionParams::mcsa`] without keeping the tape.
pub fn mcsa<T: Scalar>(
    store: &ParamStore<T>,
    x: &Tensor<T>,
    params: &AttentionParams<T>,
    spec: WindowSpec,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new(store);
    let xv = tape.input(x.clone());
    let out = params.mcsa(&mut tape, xv, spec)?;
    Ok(tape.value(out).clone())
}

/// Evaluates [`AttentionParams::msa`] without keeping the tape.
pub fn msa<T: Scalar>(store: &ParamStore<T>, x: &Tensor<T>, params: &AttentionParams<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new(store);
    let xv = tape.input(x.clone());
    let out = params.msa(&mut tape, xv)?;
    Ok(tape.value(out).clone())
}
