//! Recorded forward graph with reverse-mode gradients.
//!
//! Each differentiable call appends a node holding its output and whatever
//! the vector-Jacobian rule needs. [`Tape::backward`] walks the nodes once in
//! reverse, and [`Grads::accumulate_into`] adds the parameter gradients into
//! `Parameter::grad`.

use std::collections::HashMap;

use crate::attention::kernels as attn;
use crate::attention::window::{unfold_windows, unfold_windows_backward, WindowSpec};
use crate::blocks::{patchify, patchify_backward};
use crate::error::{Error, Result};
use crate::numerics::kernels as k;
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tensor};
use crate::training::loss::{cross_entropy, cross_entropy_backward};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Gelu(Var),
    DwConv {
        x: Var,
        k: Var,
        b: Var,
    },
    Pad {
        x: Var,
        p: usize,
    },
    AvgPool(Var),
    Add(Var, Var),
    Unfold {
        x: Var,
        spec: WindowSpec,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    Central {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        spec: WindowSpec,
        probs: Vec<T>,
    },
    Patchify {
        x: Var,
        patch: usize,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
    },
    Probe {
        x: Var,
        weights: Tensor<T>,
    },
}

struct Node<T> {
    // `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor<T>>,
    op: Op<T>,
}

pub struct Tape<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<'s, T: Scalar> Tape<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("non-parameter node without value"),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; gradients are still reported for it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = k::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = k::linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = k::softmax_lastdim(self.value(x))?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let out = k::layer_norm(self.value(x), self.value(gamma), self.value(beta))?;
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta }))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = k::gelu(self.value(x));
        self.push(out, Op::Gelu(x))
    }

    pub fn depthwise_conv3x3(&mut self, x: Var, kernel: Var, b: Var) -> Result<Var> {
        let out = k::depthwise_conv3x3(self.value(x), self.value(kernel), self.value(b))?;
        Ok(self.push(out, Op::DwConv { x, k: kernel, b }))
    }

    pub fn zero_pad2d(&mut self, x: Var, p: usize) -> Result<Var> {
        let out = k::zero_pad2d(self.value(x), p)?;
        Ok(self.push(out, Op::Pad { x, p }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = k::global_avg_pool(self.value(x))?;
        Ok(self.push(out, Op::AvgPool(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn unfold_windows(&mut self, x: Var, spec: WindowSpec) -> Result<Var> {
        let out = unfold_windows(self.value(x), spec)?;
        Ok(self.push(out, Op::Unfold { x, spec }))
    }

    /// Multi-head `softmax(QKᵀ/√d̂ + B)V`; `bias` is a constant `[N, M]`.
    pub fn attention(&mut self, q: Var, kv: (Var, Var), heads: usize, bias: Option<&Tensor<T>>) -> Result<Var> {
        let (key, v) = kv;
        let (out, probs) = attn::attention_forward(self.value(q), self.value(key), self.value(v), heads, bias)?;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k: key,
                v,
                heads,
                probs,
            },
        ))
    }

    /// Multi-head central-query attention over sliding windows.
    pub fn central_attention(&mut self, q: Var, kv: (Var, Var), heads: usize, spec: WindowSpec) -> Result<Var> {
        let (key, v) = kv;
        let (out, probs) = attn::central_attention_forward(self.value(q), self.value(key), self.value(v), heads, spec)?;
        Ok(self.push(
            out,
            Op::Central {
                q,
                k: key,
                v,
                heads,
                spec,
                probs,
            },
        ))
    }

    pub fn patchify(&mut self, x: Var, patch: usize) -> Result<Var> {
        let out = patchify(self.value(x), patch)?;
        Ok(self.push(out, Op::Patchify { x, patch }))
    }

    /// Scalar `−log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let loss = cross_entropy(self.value(logits), label)?;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, label }))
    }

    /// Scalar `Σ x ⊙ weights`, used to reduce a tensor output for audits.
    pub fn probe(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        self.value(x).expect_same_shape("probe", &weights)?;
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::Probe { x, weights }))
    }

    /// Reverse traversal from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Grads<T>> {
        if self.value(root).len() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                lhs: self.value(root).shape().to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape().to_vec(), T::one()));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let contributions = self.vjp(idx, &g)?;
            grads[idx] = Some(g);
            for (var, dv) in contributions {
                if !dv.all_finite() {
                    return Err(Error::NonFinite { op: "backward" });
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&dv)?,
                    slot => *slot = Some(dv),
                }
            }
        }

        let mut params: Vec<Option<Tensor<T>>> = (0..self.store.len()).map(|_| None).collect();
        for (&id, &var) in &self.params {
            params[id.0] = grads[var.0].clone();
        }
        Ok(Grads { nodes: grads, params })
    }

    fn vjp(&self, idx: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: &Var| self.value(*v);
        Ok(match &self.nodes[idx].op {
            Op::Input | Op::Param(_) => vec![],
            Op::MatMul(a, b) => {
                let (da, db) = k::matmul_backward(val(a), val(b), g)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Linear { x, w, b } => {
                let (dx, dw, db) = k::linear_backward(val(x), val(w), val(b), g)?;
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::Softmax(x) => {
                let s = self.nodes[idx].value.as_ref().expect("softmax output");
                vec![(*x, k::softmax_backward(s, g)?)]
            }
            Op::LayerNorm { x, gamma, beta } => {
                let (dx, dg, db) = k::layer_norm_backward(val(x), val(gamma), val(beta), g)?;
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            Op::Gelu(x) => vec![(*x, k::gelu_backward(val(x), g)?)],
            Op::DwConv { x, k: kern, b } => {
                let (dx, dk, db) = k::depthwise_conv3x3_backward(val(x), val(kern), val(b), g)?;
                vec![(*x, dx), (*kern, dk), (*b, db)]
            }
            Op::Pad { x, p } => vec![(*x, k::zero_pad2d_backward(g, *p)?)],
            Op::AvgPool(x) => vec![(*x, k::global_avg_pool_backward(val(x).shape(), g)?)],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Unfold { x, spec } => {
                let s = val(x).shape();
                vec![(*x, unfold_windows_backward(g, s[0], s[1], *spec)?)]
            }
            Op::Attention {
                q,
                k: key,
                v,
                heads,
                probs,
            } => {
                let (dq, dk, dv) = attn::attention_backward(val(q), val(key), val(v), *heads, probs, g)?;
                vec![(*q, dq), (*key, dk), (*v, dv)]
            }
            Op::Central {
                q,
                k: key,
                v,
                heads,
                spec,
                probs,
            } => {
                let (dq, dk, dv) = attn::central_attention_backward(val(q), val(key), val(v), *heads, *spec, probs, g)?;
                vec![(*q, dq), (*key, dk), (*v, dv)]
            }
            Op::Patchify { x, patch } => {
                vec![(*x, patchify_backward(g, val(x).shape(), *patch)?)]
            }
            Op::CrossEntropy { logits, label } => {
                let d = cross_entropy_backward(val(logits), *label)?;
                vec![(*logits, d.scale(g.data()[0]))]
            }
            Op::Probe { x, weights } => vec![(*x, weights.scale(g.data()[0]))],
        })
    }
}

/// Gradients from one backward traversal.
pub struct Grads<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient with respect to any node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Tensor<T>> {
        self.params.get_mut(id.0).and_then(Option::as_mut)
    }

    /// Drops per-node gradients, keeping only parameter gradients.
    pub fn into_param_grads(self) -> ParamGrads<T> {
        ParamGrads(self.params)
    }

    /// Adds every reached parameter gradient into `Parameter::grad`.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        accumulate(&self.params, store)
    }
}

/// Parameter gradients indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct ParamGrads<T>(pub(crate) Vec<Option<Tensor<T>>>);

impl<T: Scalar> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.0.get(id.0).and_then(Option::as_ref)
    }

    /// `self += other`, slot by slot.
    pub fn merge(&mut self, other: &ParamGrads<T>) -> Result<()> {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            match (a.as_mut(), b) {
                (Some(acc), Some(g)) => acc.add_assign(g)?,
                (None, Some(g)) => *a = Some(g.clone()),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        accumulate(&self.0, store)
    }
}

fn accumulate<T: Scalar>(grads: &[Option<Tensor<T>>], store: &mut ParamStore<T>) -> Result<()> {
    for (id, g) in store.ids().collect::<Vec<_>>().into_iter().zip(grads) {
        if let Some(g) = g {
            store.get_mut(id).grad.add_assign(g)?;
        }
    }
    Ok(())
}
