//! Invariant suite behind `simvit verify`.
//!
//! Every check builds its own random instances from a seed and compares the
//! production path against a slower composition of simpler pieces.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{csa, mcsa, unfold_windows, window_count, AttentionParams, WindowSpec};
use crate::blocks::{simvit_block, AttnKind, BlockParams};
use crate::error::Result;
use crate::init::Initializer;
use crate::numerics::kernels::softmax_lastdim;
use crate::tensor::{ParamStore, Tensor};

/// Instances in the oracle-equivalence check.
pub const ORACLE_CASES: usize = 50;
pub const ORACLE_TOL: f64 = 1e-10;
pub const PERMUTATION_TOL: f64 = 1e-12;
pub const HULL_TOL: f64 = 1e-12;
pub const SOFTMAX_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}",
            if self.pass { "ok" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn random_attention(d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<(ParamStore<f64>, AttentionParams<f64>)> {
    let mut store = ParamStore::new();
    let params = AttentionParams::register(&mut store, "attn", d, heads, &mut Initializer::new(rng.gen()))?;
    for p in store.params_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    Ok((store, params))
}

/// `(H', W') = (H, W)` for every map up to 64×64 under the two
/// resolution-preserving windows.
pub fn window_law() -> Check {
    let mut bad = Vec::new();
    for spec in [WindowSpec::default(), WindowSpec { k: 5, p: 2, s: 1 }] {
        for h in 1..=64 {
            for w in 1..=64 {
                if window_count(h, w, spec).ok() != Some((h, w)) {
                    bad.push((spec.k, h, w));
                }
            }
        }
    }
    Check {
        name: "window-law",
        pass: bad.is_empty(),
        detail: format!("2×64×64 maps, {} violations", bad.len()),
    }
}

fn affine_rows(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    x.data()
        .chunks(din)
        .map(|row| {
            (0..dout)
                .map(|j| b.data()[j] + (0..din).map(|i| row[i] * w.data()[i * dout + j]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Central attention assembled from per-token projections, explicit window
/// extraction and single-query attention per head.
pub fn mcsa_by_composition(
    store: &ParamStore<f64>,
    x: &Tensor<f64>,
    params: &AttentionParams<f64>,
    spec: WindowSpec,
) -> Result<Tensor<f64>> {
    let (h, w, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let proj = |wid, bid| affine_rows(x, store.value(wid), store.value(bid));
    let (q, k, v) = (
        proj(params.wq, params.bq),
        proj(params.wk, params.bk),
        proj(params.wv, params.bv),
    );
    let to_map = |rows: Vec<Vec<f64>>| Tensor::new([h, w, d], rows.concat());
    let kw = unfold_windows(&to_map(k)?, spec)?;
    let vw = unfold_windows(&to_map(v)?, spec)?;
    let n = spec.cells();
    let dh = d / params.heads;
    let mut heads_out = Vec::with_capacity(h * w * d);
    for (pos, qrow) in q.iter().enumerate() {
        for head in 0..params.heads {
            let cols = head * dh..(head + 1) * dh;
            let slice = |t: &Tensor<f64>| {
                let data = (0..n)
                    .flat_map(|c| t.data()[(pos * n + c) * d..][cols.clone()].to_vec())
                    .collect();
                Tensor::new([n, dh], data)
            };
            let qh = Tensor::new([1, dh], qrow[cols.clone()].to_vec())?;
            heads_out.extend_from_slice(csa(&qh, &slice(&kw)?, &slice(&vw)?)?.data());
        }
    }
    let concat = Tensor::new([h * w, d], heads_out)?;
    let out = affine_rows(&concat, store.value(params.wo), store.value(params.bo));
    Tensor::new([h, w, d], out.concat())
}

/// Production mcsa against [`mcsa_by_composition`] on random instances.
pub fn oracle_equivalence(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..ORACLE_CASES {
        let heads = *[1usize, 2, 4].choose(&mut rng).expect("non-empty");
        let d = heads * rng.gen_range(1..=16 / heads);
        let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let spec = if rng.gen_bool(0.5) {
            WindowSpec::default()
        } else {
            WindowSpec { k: 5, p: 2, s: 1 }
        };
        let (store, params) = random_attention(d, heads, &mut rng)?;
        let x = uniform(&[h, w, d], &mut rng);
        let fast = mcsa(&store, &x, &params, spec)?;
        let slow = mcsa_by_composition(&store, &x, &params, spec)?;
        worst = worst.max(fast.max_abs_diff(&slow));
    }
    Ok(Check {
        name: "oracle-equivalence",
        pass: worst <= ORACLE_TOL,
        detail: format!("{ORACLE_CASES} instances, max |Δ| {worst:.3e}"),
    })
}

/// Jointly permuting key/value rows leaves csa unchanged.
pub fn permutation_invariance(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (n, d) = (rng.gen_range(1..=25), rng.gen_range(1..=16));
        let q = uniform(&[1, d], &mut rng);
        let (k, v) = (uniform(&[n, d], &mut rng), uniform(&[n, d], &mut rng));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permute = |t: &Tensor<f64>| {
            let rows: Vec<f64> = perm
                .iter()
                .flat_map(|&r| t.data()[r * d..(r + 1) * d].to_vec())
                .collect();
            Tensor::new([n, d], rows)
        };
        let a = csa(&q, &k, &v)?;
        let b = csa(&q, &permute(&k)?, &permute(&v)?)?;
        worst = worst.max(a.max_abs_diff(&b));
    }
    Ok(Check {
        name: "permutation-invariance",
        pass: worst <= PERMUTATION_TOL,
        detail: format!("20 instances, max |Δ| {worst:.3e}"),
    })
}

/// Each csa output coordinate lies between the min and max of its value column.
pub fn convex_hull(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
    let mut violations = 0usize;
    for _ in 0..50 {
        let (n, d) = (rng.gen_range(1..=25), rng.gen_range(1..=16));
        let scale = rng.gen_range(0.1..10.0);
        let q = uniform(&[1, d], &mut rng).scale(scale);
        let (k, v) = (uniform(&[n, d], &mut rng), uniform(&[n, d], &mut rng));
        let out = csa(&q, &k, &v)?;
        for c in 0..d {
            let col = (0..n).map(|r| v.data()[r * d + c]);
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            let y = out.data()[c];
            if y < lo - HULL_TOL || y > hi + HULL_TOL {
                violations += 1;
            }
        }
    }
    Ok(Check {
        name: "convex-hull",
        pass: violations == 0,
        detail: format!("50 instances, {violations} violations"),
    })
}

/// Shifting the input map shifts mcsa outputs bit-for-bit at positions
/// whose windows stay clear of the padding.
pub fn translation_equivariance(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
    let (big, size, d) = (14usize, 11usize, 8usize);
    let mut mismatches = 0usize;
    let mut compared = 0usize;
    for spec in [WindowSpec::default(), WindowSpec { k: 5, p: 2, s: 1 }] {
        let (store, params) = random_attention(d, 2, &mut rng)?;
        let z = uniform(&[big, big, d], &mut rng);
        let (dy, dx) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let crop = |oy: usize, ox: usize| {
            let mut data = Vec::with_capacity(size * size * d);
            for i in 0..size {
                let start = ((oy + i) * big + ox) * d;
                data.extend_from_slice(&z.data()[start..start + size * d]);
            }
            Tensor::new([size, size, d], data)
        };
        let a = mcsa(&store, &crop(0, 0)?, &params, spec)?;
        let b = mcsa(&store, &crop(dy, dx)?, &params, spec)?;
        let p = spec.p;
        let interior = |i: usize| i >= p && i + p < size;
        for i in 0..size - dy {
            for j in 0..size - dx {
                if !(interior(i) && interior(j) && interior(i + dy) && interior(j + dx)) {
                    continue;
                }
                compared += 1;
                let ra = &a.data()[((i + dy) * size + j + dx) * d..][..d];
                let rb = &b.data()[(i * size + j) * d..][..d];
                if ra.iter().zip(rb).any(|(x, y)| x.to_bits() != y.to_bits()) {
                    mismatches += 1;
                }
            }
        }
    }
    Ok(Check {
        name: "translation-equivariance",
        pass: mismatches == 0 && compared > 0,
        detail: format!("{compared} interior positions, {mismatches} not bit-identical"),
    })
}

/// Softmax rows sum to one in both precisions.
pub fn softmax_normalization(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (rows, cols) = (rng.gen_range(1..=8), rng.gen_range(1..=40));
        let scale = rng.gen_range(0.1..50.0);
        let x = uniform(&[rows, cols], &mut rng).scale(scale);
        let s64 = softmax_lastdim(&x)?;
        let s32 = softmax_lastdim(&x.cast::<f32>())?;
        for r in 0..rows {
            let sum64: f64 = s64.data()[r * cols..(r + 1) * cols].iter().sum();
            let sum32: f32 = s32.data()[r * cols..(r + 1) * cols].iter().sum();
            worst = worst.max((sum64 - 1.0).abs()).max((f64::from(sum32) - 1.0).abs());
        }
    }
    Ok(Check {
        name: "softmax-normalization",
        pass: worst <= SOFTMAX_TOL,
        detail: format!("max |Σ − 1| {worst:.3e}"),
    })
}

/// A block whose attention output projection and second FFN layer are zero
/// returns its input exactly.
pub fn zero_branch_identity(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
    let mut exact = true;
    for kind in [AttnKind::Central, AttnKind::Global] {
        let mut store = ParamStore::<f64>::new();
        let block = BlockParams::register(
            &mut store,
            "b",
            8,
            2,
            4,
            kind,
            WindowSpec::default(),
            &mut Initializer::new(seed),
        )?;
        for id in [block.attn.wo, block.attn.bo, block.ffn.fc2.weight, block.ffn.fc2.bias] {
            *store.value_mut(id) = Tensor::zeros(store.value(id).shape().to_vec());
        }
        let x = uniform(&[5, 6, 8], &mut rng);
        exact &= simvit_block(&store, &x, &block)?.bit_eq(&x);
    }
    Ok(Check {
        name: "zero-branch-identity",
        pass: exact,
        detail: "central and global blocks".into(),
    })
}

/// Runs the full suite.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        window_law(),
        oracle_equivalence(seed)?,
        permutation_invariance(seed)?,
        translation_equivariance(seed)?,
        convex_hull(seed)?,
        softmax_normalization(seed)?,
        zero_branch_identity(seed)?,
    ])
}
