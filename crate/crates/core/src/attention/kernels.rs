//! Scaled dot-product attention kernels, global and central-query.
//!
//! Heads are contiguous column blocks of width `d / heads`; the logit scale is
//! `1/sqrt(d / heads)`.

use crate::attention::window::{window_centers, window_count, window_index, WindowSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn head_width(op: &'static str, d: usize, heads: usize) -> Result<usize> {
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "{op}: width {d} is not divisible by {heads} heads"
        )));
    }
    Ok(d / heads)
}

fn rows<T: Scalar>(t: &Tensor<T>) -> usize {
    t.len() / t.last_dim().max(1)
}

/// Forward pass of `softmax(Q·Kᵀ/√d̂ + B)·V` per head.
///
/// `q` is `[.., N, d]` (any leading shape flattened to N rows), `k` and `v`
/// are `[M, d]`-shaped likewise, `bias` is `[N, M]` shared by every head.
/// Returns the output (shaped like `q`) and the attention weights laid out
/// as `[heads, N, M]`.
pub fn attention_forward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    bias: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let d = q.last_dim();
    if k.last_dim() != d || k.shape() != v.shape() {
        return Err(Error::Dimension {
            op: "attention",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let dh = head_width("attention", d, heads)?;
    let (n, m) = (rows(q), rows(k));
    if m == 0 {
        return Err(Error::Geometry("attention over zero keys".into()));
    }
    if let Some(b) = bias {
        if b.shape() != [n, m] {
            return Err(Error::Dimension {
                op: "attention bias",
                lhs: vec![n, m],
                rhs: b.shape().to_vec(),
            });
        }
    }
    let scale = T::one() / T::of(dh as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut probs = vec![T::zero(); heads * n * m];
    let mut out = vec![T::zero(); n * d];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let qrow = &qd[i * d + cols.start..i * d + cols.end];
            let prow = &mut probs[(h * n + i) * m..(h * n + i + 1) * m];
            for (j, p) in prow.iter_mut().enumerate() {
                let krow = &kd[j * d + cols.start..j * d + cols.end];
                let dot: T = qrow.iter().zip(krow).map(|(&a, &b)| a * b).sum();
                *p = dot * scale + bias.map_or(T::zero(), |b| b.data()[i * m + j]);
            }
            crate::numerics::kernels::softmax_in_place(prow);
            let orow = &mut out[i * d + cols.start..i * d + cols.end];
            for (j, &p) in prow.iter().enumerate() {
                let vrow = &vd[j * d + cols.start..j * d + cols.end];
                for (o, &vv) in orow.iter_mut().zip(vrow) {
                    *o += p * vv;
                }
            }
        }
    }
    Ok((Tensor::new(q.shape().to_vec(), out)?, probs))
}

/// Vector-Jacobian product of [`attention_forward`] given its weights.
pub fn attention_backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    probs: &[T],
    dout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let d = q.last_dim();
    let dh = head_width("attention", d, heads)?;
    let (n, m) = (rows(q), rows(k));
    let scale = T::one() / T::of(dh as f64).sqrt();
    let (qd, kd, vd, gd) = (q.data(), k.data(), v.data(), dout.data());
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut ds = vec![T::zero(); m];
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..n {
            let prow = &probs[(h * n + i) * m..(h * n + i + 1) * m];
            let grow = &gd[i * d + c0..i * d + c0 + dh];
            let mut dot = T::zero();
            for j in 0..m {
                let vrow = &vd[j * d + c0..j * d + c0 + dh];
                let dp: T = grow.iter().zip(vrow).map(|(&a, &b)| a * b).sum();
                ds[j] = dp;
                dot += prow[j] * dp;
                for (dvv, &g) in dv[j * d + c0..j * d + c0 + dh].iter_mut().zip(grow) {
                    *dvv += prow[j] * g;
                }
            }
            for j in 0..m {
                let s = prow[j] * (ds[j] - dot) * scale;
                if s == T::zero() {
                    continue;
                }
                for c in 0..dh {
                    dq[i * d + c0 + c] += s * kd[j * d + c0 + c];
                    dk[j * d + c0 + c] += s * qd[i * d + c0 + c];
                }
            }
        }
    }
    Ok((
        Tensor::new(q.shape().to_vec(), dq)?,
        Tensor::new(k.shape().to_vec(), dk)?,
        Tensor::new(v.shape().to_vec(), dv)?,
    ))
}

/// Precomputed window layout for central attention over an `H×W` map.
#[derive(Debug, Clone)]
pub(crate) struct CentralLayout {
    pub out_hw: (usize, usize),
    pub cells: usize,
    pub centers: Vec<usize>,
    pub index: Vec<Option<usize>>,
}

impl CentralLayout {
    pub fn new(h: usize, w: usize, spec: WindowSpec) -> Result<Self> {
        Ok(Self {
            out_hw: window_count(h, w, spec)?,
            cells: spec.cells(),
            centers: window_centers(h, w, spec)?,
            index: window_index(h, w, spec)?,
        })
    }
}

fn central_check<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<(usize, usize, usize)> {
    q.expect_rank("central_attention", 3)?;
    if q.shape() != k.shape() || q.shape() != v.shape() {
        return Err(Error::Dimension {
            op: "central_attention",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    Ok((q.shape()[0], q.shape()[1], q.shape()[2]))
}

/// Central-query attention over every sliding window.
///
/// `q`, `k`, `v` are projected `[H, W, d]` maps. Window `(i, j)` attends
/// from the query at its central token to the keys/values of its `k²`
/// cells; padding cells hold zero keys and zero values. Returns the
/// `[H', W', d]` output and weights laid out `[windows, heads, k²]`.
pub fn central_attention_forward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    spec: WindowSpec,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (h, w, d) = central_check(q, k, v)?;
    let dh = head_width("central_attention", d, heads)?;
    let layout = CentralLayout::new(h, w, spec)?;
    let cells = layout.cells;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let windows = layout.centers.len();
    let mut out = vec![T::zero(); windows * d];
    let mut probs = vec![T::zero(); windows * heads * cells];
    for (win, &center) in layout.centers.iter().enumerate() {
        let srcs = &layout.index[win * cells..(win + 1) * cells];
        for hd in 0..heads {
            let c0 = hd * dh;
            let qrow = &qd[center * d + c0..center * d + c0 + dh];
            let prow = &mut probs[(win * heads + hd) * cells..(win * heads + hd + 1) * cells];
            for (p, src) in prow.iter_mut().zip(srcs) {
                *p = match src {
                    Some(t) => {
                        let krow = &kd[t * d + c0..t * d + c0 + dh];
                        qrow.iter().zip(krow).map(|(&a, &b)| a * b).sum::<T>() * scale
                    }
                    None => T::zero(),
                };
            }
            crate::numerics::kernels::softmax_in_place(prow);
            let orow = &mut out[win * d + c0..win * d + c0 + dh];
            for (&p, src) in prow.iter().zip(srcs) {
                if let Some(t) = src {
                    for (o, &vv) in orow.iter_mut().zip(&vd[t * d + c0..t * d + c0 + dh]) {
                        *o += p * vv;
                    }
                }
            }
        }
    }
    let (oh, ow) = layout.out_hw;
    Ok((Tensor::new([oh, ow, d], out)?, probs))
}

pub fn central_attention_backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    spec: WindowSpec,
    probs: &[T],
    dout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (h, w, d) = central_check(q, k, v)?;
    let dh = head_width("central_attention", d, heads)?;
    let layout = CentralLayout::new(h, w, spec)?;
    let cells = layout.cells;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let (qd, kd, vd, gd) = (q.data(), k.data(), v.data(), dout.data());
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dp = vec![T::zero(); cells];
    for (win, &center) in layout.centers.iter().enumerate() {
        let srcs = &layout.index[win * cells..(win + 1) * cells];
        for hd in 0..heads {
            let c0 = hd * dh;
            let prow = &probs[(win * heads + hd) * cells..(win * heads + hd + 1) * cells];
            let grow = &gd[win * d + c0..win * d + c0 + dh];
            let mut dot = T::zero();
            for (c, src) in srcs.iter().enumerate() {
                dp[c] = match src {
                    Some(t) => {
                        let vrow = &vd[t * d + c0..t * d + c0 + dh];
                        for (dvv, &g) in dv[t * d + c0..t * d + c0 + dh].iter_mut().zip(grow) {
                            *dvv += prow[c] * g;
                        }
                        grow.iter().zip(vrow).map(|(&a, &b)| a * b).sum()
                    }
                    None => T::zero(),
                };
                dot += prow[c] * dp[c];
            }
            for (c, src) in srcs.iter().enumerate() {
                let Some(t) = src else { continue };
                let s = prow[c] * (dp[c] - dot) * scale;
                for j in 0..dh {
                    dq[center * d + c0 + j] += s * kd[t * d + c0 + j];
                    dk[t * d + c0 + j] += s * qd[center * d + c0 + j];
                }
            }
        }
    }
    Ok((
        Tensor::new(q.shape().to_vec(), dq)?,
        Tensor::new(k.shape().to_vec(), dk)?,
        Tensor::new(v.shape().to_vec(), dv)?,
    ))
}
