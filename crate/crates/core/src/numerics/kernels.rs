//! Forward kernels and their vector-Jacobian products.
//!
//! Every `*_backward` takes the forward inputs plus the upstream gradient and
//! returns gradients for each differentiable input, in argument order.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Layer-norm variance epsilon.
pub const LN_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// raw matrix products on row-major slices

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[k×n] += aᵀ · b` for `a[m×k]`, `b[m×n]`.
pub(crate) fn gemm_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×k] += a · bᵀ` for `a[m×n]`, `b[k×n]`.
pub(crate) fn gemm_nt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: T = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            c[i * k + p] += dot;
        }
    }
}

fn rows_of<T: Scalar>(x: &Tensor<T>) -> (usize, usize) {
    let d = x.last_dim();
    (x.len() / d.max(1), d)
}

// ---------------------------------------------------------------------------
// matmul

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k, n) = matmul_dims(a, b)?;
    let mut out = vec![T::zero(); m * n];
    gemm_acc(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new([m, n], out)
}

pub fn matmul_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, dc: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, k, n) = matmul_dims(a, b)?;
    let mut da = vec![T::zero(); m * k];
    let mut db = vec![T::zero(); k * n];
    gemm_nt_acc(dc.data(), b.data(), &mut da, m, k, n);
    gemm_tn_acc(a.data(), dc.data(), &mut db, m, k, n);
    Ok((Tensor::new([m, k], da)?, Tensor::new([k, n], db)?))
}

fn matmul_dims<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match (a.shape(), b.shape()) {
        (&[m, k], &[k2, n]) if k == k2 => Ok((m, k, n)),
        _ => Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }),
    }
}

// ---------------------------------------------------------------------------
// linear

fn linear_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (rows, d_in) = rows_of(x);
    match w.shape() {
        &[wi, wo] if wi == d_in && b.shape() == [wo] => Ok((rows, d_in, wo)),
        _ => Err(Error::Dimension {
            op: "linear",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        }),
    }
}

/// `y = x·w + b` over the last extent of `x`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, d_in, d_out) = linear_dims(x, w, b)?;
    let mut out = Vec::with_capacity(rows * d_out);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    gemm_acc(x.data(), w.data(), &mut out, rows, d_in, d_out);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank ≥ 1") = d_out;
    Tensor::new(shape, out)
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (rows, d_in, d_out) = linear_dims(x, w, b)?;
    let mut dx = vec![T::zero(); rows * d_in];
    let mut dw = vec![T::zero(); d_in * d_out];
    let mut db = vec![T::zero(); d_out];
    gemm_nt_acc(dy.data(), w.data(), &mut dx, rows, d_in, d_out);
    gemm_tn_acc(x.data(), dy.data(), &mut dw, rows, d_in, d_out);
    for row in dy.data().chunks_exact(d_out) {
        for (g, &v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(w.shape().to_vec(), dw)?,
        Tensor::new(b.shape().to_vec(), db)?,
    ))
}

// ---------------------------------------------------------------------------
// softmax

/// Numerically stabilized softmax over the last extent.
pub fn softmax_lastdim<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if !x.all_finite() {
        return Err(Error::NonFinite { op: "softmax" });
    }
    let n = x.last_dim();
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `dx = s ⊙ (ds − ⟨s, ds⟩)` per slice, given the forward output `s`.
pub fn softmax_backward<T: Scalar>(s: &Tensor<T>, ds: &Tensor<T>) -> Result<Tensor<T>> {
    s.expect_same_shape("softmax_backward", ds)?;
    let n = s.last_dim();
    let mut dx = vec![T::zero(); s.len()];
    for ((srow, grow), out) in s
        .data()
        .chunks_exact(n)
        .zip(ds.data().chunks_exact(n))
        .zip(dx.chunks_exact_mut(n))
    {
        let dot: T = srow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
        for ((o, &sv), &gv) in out.iter_mut().zip(srow).zip(grow) {
            *o = sv * (gv - dot);
        }
    }
    Tensor::new(s.shape().to_vec(), dx)
}

// ---------------------------------------------------------------------------
// layer norm

fn ln_check<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    let c = x.last_dim();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::Dimension {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    Ok(c)
}

fn ln_stats<T: Scalar>(row: &[T]) -> (T, T) {
    let n = T::of(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + T::of(LN_EPS)).sqrt())
}

/// `(x − mean)/sqrt(var + ε)·gamma + beta` per last-dim slice.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
    let c = ln_check(x, gamma, beta)?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let (mean, rstd) = ln_stats(row);
        for ((v, &g), &b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = (*v - mean) * rstd * g + b;
        }
    }
    Ok(out)
}

pub fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let c = ln_check(x, gamma, beta)?;
    let cf = T::of(c as f64);
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut xhat = vec![T::zero(); c];
    let mut dxhat = vec![T::zero(); c];
    for ((row, grow), out) in x
        .data()
        .chunks_exact(c)
        .zip(dy.data().chunks_exact(c))
        .zip(dx.chunks_exact_mut(c))
    {
        let (mean, rstd) = ln_stats(row);
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for j in 0..c {
            xhat[j] = (row[j] - mean) * rstd;
            dxhat[j] = grow[j] * gamma.data()[j];
            dgamma[j] += grow[j] * xhat[j];
            dbeta[j] += grow[j];
            sum_d += dxhat[j];
            sum_dx += dxhat[j] * xhat[j];
        }
        let mean_d = sum_d / cf;
        let mean_dx = sum_dx / cf;
        for j in 0..c {
            out[j] = rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new([c], dgamma)?,
        Tensor::new([c], dbeta)?,
    ))
}

// ---------------------------------------------------------------------------
// gelu

#[inline]
pub(crate) fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    x * half * (T::one() + (x * T::FRAC_1_SQRT_2()).erf())
}

#[inline]
fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::FRAC_1_SQRT_2()).erf());
    let pdf = (-(x * x) * half).exp() * T::FRAC_2_SQRT_PI() * T::FRAC_1_SQRT_2() * half;
    cdf + x * pdf
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(dy, |v, g| g * gelu_grad_scalar(v))
}

// ---------------------------------------------------------------------------
// depthwise 3×3 convolution, zero padding 1, stride 1

fn dw_check<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    x.expect_rank("depthwise_conv3x3", 3)?;
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if k.shape() != [3, 3, c] || b.shape() != [c] {
        return Err(Error::Dimension {
            op: "depthwise_conv3x3",
            lhs: x.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    Ok((h, w, c))
}

/// Iterates the in-bounds taps around `(y, x)`: `(tap index, source row, source col)`.
fn taps(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..3usize).flat_map(move |dy| {
        (0..3usize).filter_map(move |dx| {
            let sy = (y + dy).checked_sub(1)?;
            let sx = (x + dx).checked_sub(1)?;
            (sy < h && sx < w).then_some((dy * 3 + dx, sy, sx))
        })
    })
}

pub fn depthwise_conv3x3<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = dw_check(x, k, b)?;
    let xd = x.data();
    let kd = k.data();
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for xx in 0..w {
            let base = out.len();
            out.extend_from_slice(b.data());
            let orow = &mut out[base..base + c];
            for (tap, sy, sx) in taps(y, xx, h, w) {
                let src = &xd[(sy * w + sx) * c..(sy * w + sx + 1) * c];
                let ker = &kd[tap * c..(tap + 1) * c];
                for ((o, &s), &kv) in orow.iter_mut().zip(src).zip(ker) {
                    *o += s * kv;
                }
            }
        }
    }
    Tensor::new([h, w, c], out)
}

pub fn depthwise_conv3x3_backward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (h, w, c) = dw_check(x, k, b)?;
    x.expect_same_shape("depthwise_conv3x3_backward", dy)?;
    let xd = x.data();
    let kd = k.data();
    let mut dx = vec![T::zero(); x.len()];
    let mut dk = vec![T::zero(); 9 * c];
    let mut db = vec![T::zero(); c];
    for y in 0..h {
        for xx in 0..w {
            let g = &dy.data()[(y * w + xx) * c..(y * w + xx + 1) * c];
            for (d, &gv) in db.iter_mut().zip(g) {
                *d += gv;
            }
            for (tap, sy, sx) in taps(y, xx, h, w) {
                let off = (sy * w + sx) * c;
                for ch in 0..c {
                    dx[off + ch] += g[ch] * kd[tap * c + ch];
                    dk[tap * c + ch] += g[ch] * xd[off + ch];
                }
            }
        }
    }
    Ok((
        Tensor::new([h, w, c], dx)?,
        Tensor::new([3, 3, c], dk)?,
        Tensor::new([c], db)?,
    ))
}

// ---------------------------------------------------------------------------
// zero padding

pub fn zero_pad2d<T: Scalar>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    x.expect_rank("zero_pad2d", 3)?;
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let mut out = vec![T::zero(); ph * pw * c];
    for y in 0..h {
        let dst = ((y + p) * pw + p) * c;
        out[dst..dst + w * c].copy_from_slice(&x.data()[y * w * c..(y + 1) * w * c]);
    }
    Tensor::new([ph, pw, c], out)
}

/// Crops the interior of a padded gradient.
pub fn zero_pad2d_backward<T: Scalar>(dy: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    dy.expect_rank("zero_pad2d_backward", 3)?;
    let (ph, pw, c) = (dy.shape()[0], dy.shape()[1], dy.shape()[2]);
    if ph < 2 * p || pw < 2 * p {
        return Err(Error::Geometry(format!("cannot crop {p} from shape {:?}", dy.shape())));
    }
    let (h, w) = (ph - 2 * p, pw - 2 * p);
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        let src = ((y + p) * pw + p) * c;
        out.extend_from_slice(&dy.data()[src..src + w * c]);
    }
    Tensor::new([h, w, c], out)
}

// ---------------------------------------------------------------------------
// global average pooling

pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.expect_rank("global_avg_pool", 3)?;
    let c = x.shape()[2];
    let n = x.shape()[0] * x.shape()[1];
    if n == 0 {
        return Err(Error::Geometry("global_avg_pool: empty map".into()));
    }
    let mut acc = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let inv = T::one() / T::of(n as f64);
    Tensor::new([c], acc.into_iter().map(|v| v * inv).collect())
}

pub fn global_avg_pool_backward<T: Scalar>(shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    if dy.shape() != [c] {
        return Err(Error::Dimension {
            op: "global_avg_pool_backward",
            lhs: shape.to_vec(),
            rhs: dy.shape().to_vec(),
        });
    }
    let inv = T::one() / T::of((h * w) as f64);
    let row: Vec<T> = dy.data().iter().map(|&g| g * inv).collect();
    let mut out = Vec::with_capacity(h * w * c);
    for _ in 0..h * w {
        out.extend_from_slice(&row);
    }
    Tensor::new([h, w, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = rand_t(&[3, 3], 1);
        let out = matmul(&a, &Tensor::eye(3)).unwrap();
        assert!(out.bit_eq(&a));
        let z = matmul(&Tensor::<f64>::zeros([2, 4]), &rand_t(&[4, 5], 2)).unwrap();
        assert_eq!(z.shape(), &[2, 5]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_vs_triple_loop() {
        let a = rand_t(&[5, 7], 3);
        let b = rand_t(&[7, 3], 4);
        let c = matmul(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for p in 0..7 {
                    s += a.data()[i * 7 + p] * b.data()[p * 3 + j];
                }
                assert!((c.data()[i * 3 + j] - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let err = matmul(&rand_t(&[2, 3], 0), &rand_t(&[4, 2], 0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn linear_identity_zero_and_loop() {
        let x = rand_t(&[2, 3, 4], 5);
        let y = linear(&x, &Tensor::eye(4), &Tensor::zeros([4])).unwrap();
        assert!(y.bit_eq(&x));

        let b = rand_t(&[3], 6);
        let w = rand_t(&[4, 3], 7);
        let y0 = linear(&Tensor::zeros([2, 4]), &w, &b).unwrap();
        assert_eq!(&y0.data()[..3], b.data());
        assert_eq!(&y0.data()[3..], b.data());

        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3]);
        for r in 0..6 {
            for o in 0..3 {
                let mut s = b.data()[o];
                for i in 0..4 {
                    s += x.data()[r * 4 + i] * w.data()[i * 3 + o];
                }
                assert!((y.data()[r * 3 + o] - s).abs() <= 1e-12);
            }
        }
        assert!(linear(&x, &rand_t(&[3, 3], 0), &b).is_err());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_lastdim(&Tensor::<f64>::zeros([3])).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_lastdim(&Tensor::new([2], vec![0.0, 3f64.ln()]).unwrap()).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);

        let x = rand_t(&[4, 6], 8);
        let shifted = x.map(|v| v + 17.25);
        let d = softmax_lastdim(&x)
            .unwrap()
            .max_abs_diff(&softmax_lastdim(&shifted).unwrap());
        assert!(d <= 1e-12);

        let bad = Tensor::new([2], vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(softmax_lastdim(&bad), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn layer_norm_examples() {
        let g = Tensor::<f64>::full([4], 1.0);
        let b = Tensor::<f64>::zeros([4]);
        let y = layer_norm(&Tensor::full([4], 3.0), &g, &b).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let g2 = Tensor::<f64>::full([2], 1.0);
        let b2 = Tensor::<f64>::zeros([2]);
        let y = layer_norm(&Tensor::new([2], vec![1.0, -1.0]).unwrap(), &g2, &b2).unwrap();
        let expect = 1.0 / (1.0 + LN_EPS).sqrt();
        assert!((y.data()[0] - expect).abs() < 1e-15);
        assert!((y.data()[1] + expect).abs() < 1e-15);
        assert!((expect - 0.999995).abs() < 1e-9);

        let x = rand_t(&[16], 9).map(|v| 3.0 * v + 1.0);
        let g = Tensor::<f64>::full([16], 1.0);
        let y = layer_norm(&x, &g, &Tensor::zeros([16])).unwrap();
        assert!(y.mean().abs() <= 1e-9);
        assert!((y.std() * y.std() - 1.0).abs() <= 1e-4);
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        for &x in &[-3.2, -0.7, 0.1, 1.9, 5.0] {
            assert!((gelu_scalar::<f64>(x) - gelu_scalar::<f64>(-x) - x).abs() <= 1e-12);
        }
        let g = gelu_scalar(10.0f64);
        assert!((10.0 - 1e-9..=10.0).contains(&g));
    }

    #[test]
    fn dwconv_identity_and_constant() {
        let x = rand_t(&[4, 5, 3], 10);
        let mut k = Tensor::<f64>::zeros([3, 3, 3]);
        for c in 0..3 {
            k.data_mut()[4 * 3 + c] = 1.0;
        }
        let y = depthwise_conv3x3(&x, &k, &Tensor::zeros([3])).unwrap();
        assert!(y.bit_eq(&x));

        let c = 0.75;
        let xc = Tensor::<f64>::full([4, 4, 2], c);
        let b = Tensor::new([2], vec![0.5, -1.0]).unwrap();
        let y = depthwise_conv3x3(&xc, &Tensor::full([3, 3, 2], 1.0), &b).unwrap();
        for yy in 1..3 {
            for xx in 1..3 {
                for ch in 0..2 {
                    let v = y.data()[(yy * 4 + xx) * 2 + ch];
                    assert!((v - (9.0 * c + b.data()[ch])).abs() < 1e-14);
                }
            }
        }
        assert!(depthwise_conv3x3(&x, &Tensor::zeros([3, 3, 2]), &Tensor::zeros([2])).is_err());
    }

    #[test]
    fn dwconv_vs_nested_loops() {
        let (h, w, c) = (5, 4, 3);
        let x = rand_t(&[h, w, c], 11);
        let k = rand_t(&[3, 3, c], 12);
        let b = rand_t(&[c], 13);
        let y = depthwise_conv3x3(&x, &k, &b).unwrap();
        for yy in 0..h as i64 {
            for xx in 0..w as i64 {
                for ch in 0..c {
                    let mut s = b.data()[ch];
                    for dy in 0..3i64 {
                        for dx in 0..3i64 {
                            let (sy, sx) = (yy + dy - 1, xx + dx - 1);
                            if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                continue;
                            }
                            s += k.data()[((dy * 3 + dx) as usize) * c + ch]
                                * x.data()[((sy as usize) * w + sx as usize) * c + ch];
                        }
                    }
                    let got = y.data()[((yy as usize) * w + xx as usize) * c + ch];
                    assert!((got - s).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn pad_examples() {
        let x = rand_t(&[3, 3, 2], 14);
        assert!(zero_pad2d(&x, 0).unwrap().bit_eq(&x));
        let p = zero_pad2d(&x, 1).unwrap();
        assert_eq!(p.shape(), &[5, 5, 2]);
        let mut border = 0;
        for y in 0..5 {
            for xx in 0..5 {
                if y == 0 || y == 4 || xx == 0 || xx == 4 {
                    border += 1;
                    assert!(p.data()[(y * 5 + xx) * 2..(y * 5 + xx + 1) * 2]
                        .iter()
                        .all(|&v| v == 0.0));
                }
            }
        }
        assert_eq!(border, 16);
        assert!((p.sum() - x.sum()).abs() < 1e-12);
        assert!(zero_pad2d_backward(&p, 1).unwrap().bit_eq(&x));
    }

    #[test]
    fn pool_examples() {
        let c = Tensor::<f64>::full([3, 2, 4], 2.5);
        assert!(global_avg_pool(&c).unwrap().data().iter().all(|&v| v == 2.5));
        let one = rand_t(&[1, 1, 5], 15);
        assert!(global_avg_pool(&one)
            .unwrap()
            .bit_eq(&one.clone().reshape([5]).unwrap()));
        let x = rand_t(&[3, 4, 2], 16);
        let p = global_avg_pool(&x).unwrap();
        for ch in 0..2 {
            let mut s = 0.0;
            for i in 0..12 {
                s += x.data()[i * 2 + ch];
            }
            assert!((p.data()[ch] - s / 12.0).abs() <= 1e-12);
        }
    }
}
