//! Gradient audits for every differentiable building block.
//!
//! Each case wraps one operation in a scalar loss (a fixed random linear
//! probe of its output, or cross-entropy for the full model), registers all
//! differentiable inputs as parameters and hands the closure to
//! [`finite_diff_check`]. Everything runs in `f64`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionParams, WindowSpec};
use crate::blocks::{AttnKind, BlockParams, ConvFFNParams, PatchEmbedParams};
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::model::{build_model, preset_config, Variant};
use crate::numerics::{Tape, Var};
use crate::tensor::{ParamStore, Tensor};
use crate::training::gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};

/// Seeds per kernel case.
pub const KERNEL_SEEDS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Kernel,
    Attention,
    Block,
    Model,
    All,
}

impl Scope {
    fn includes(self, other: Scope) -> bool {
        self == Scope::All || self == other
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "kernel" => Scope::Kernel,
            "attention" => Scope::Attention,
            "block" => Scope::Block,
            "model" => Scope::Model,
            "all" => Scope::All,
            other => return Err(Error::UnknownVariant(format!("audit scope `{other}`"))),
        })
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Kernel => "kernel",
            Scope::Attention => "attention",
            Scope::Block => "block",
            Scope::Model => "model",
            Scope::All => "all",
        })
    }
}

#[derive(Debug, Clone)]
pub struct AuditCase {
    pub name: String,
    pub report: GradCheckReport,
}

impl fmt::Display for AuditCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let worst = self.report.worst().map_or(String::from("-"), |e| e.name.clone());
        write!(
            f,
            "{}\t{}\tmax_rel_err {:.3e}\tworst {}",
            if self.report.pass { "ok" } else { "FAIL" },
            self.name,
            self.report.max_rel_err(),
            worst
        )
    }
}

fn uniform(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-scale..scale))
}

/// Replaces every parameter with uniform noise so no gradient path is
/// trivially zero or symmetric.
fn scramble(store: &mut ParamStore<f64>, scale: f64, rng: &mut ChaCha8Rng) {
    for p in store.params_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

fn probe_weights(tape: &Tape<'_, f64>, out: Var, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    uniform(tape.value(out).shape(), 1.0, &mut rng)
}

fn check<F>(name: String, store: &ParamStore<f64>, seed: u64, loss: F) -> Result<AuditCase>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var> + Sync,
{
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let report = finite_diff_check(store, loss, opts)?;
    Ok(AuditCase { name, report })
}

/// The eight tensor kernels, each with random inputs registered as parameters.
pub fn kernel_cases(seed: u64) -> Result<Vec<AuditCase>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag = |k: &str| format!("kernel/{k}[seed {seed}]");

    let mut s = ParamStore::new();
    let a = s.register("a", uniform(&[3, 4], 1.0, &mut rng));
    let b = s.register("b", uniform(&[4, 5], 1.0, &mut rng));
    out.push(check(tag("matmul"), &s, seed, |t| {
        let (av, bv) = (t.param(a), t.param(b));
        let y = t.matmul(av, bv)?;
        let w = probe_weights(t, y, seed);
        t.probe(y, w)
    })?);

    let mut s = ParamStore::new();
    let x = s.register("x", uniform(&[2, 3, 4], 1.0, &mut rng));
    let w = s.register("w", uniform(&[4, 5], 1.0, &mut rng));
    let bias = s.register("b", uniform(&[5], 1.0, &mut rng));
    out.push(check(tag("linear"), &s, seed, |t| {
        let (xv, wv, bv) = (t.param(x), t.param(w), t.param(bias));
        let y = t.linear(xv, wv, bv)?;
        let p = probe_weights(t, y, seed);
        t.probe(y, p)
    })?);

    let mut s = ParamStore::new();
    let x = s.register("x", uniform(&[4, 6], 2.0, &mut rng));
    out.push(check(tag("softmax"), &s, seed, |t| {
        let xv = t.param(x);
        let y = t.softmax(xv)?;
        let p = probe_weights(t, y, seed);
        t.probe(y, p)
    })?);

    let mut s = ParamStore::new();
    let x = s.register("x", uniform(&[3, 6], 1.0, &mut rng));
    let g = s.register("gamma", uniform(&[6], 1.5, &mut rng));
    let bb = s.register("beta", uniform(&[6], 1.0, &mut rng));
    out.push(check(tag("layer_norm"), &s, seed, |t| {
        let (xv, gv, bv) = (t.param(x), t.param(g), t.param(bb));
        let y = t.layer_norm(xv, gv, bv)?;
        let p = probe_weights(t, y, seed);
        t.probe(y, p)
    })?);

    let mut s = ParamStore::new();
    let x = s.register("x", uniform(&[5, 4], 3.0, &mut rng));
    out.push(check(tag("gelu"), &s, seed, |t| {
        let xv = t.param(x);
        let y = t.gelu(xv);
        let p = probe_weights(t, y, seed);
        t.probe(y, p)
    })?);

    let mut s = ParamStore::new();
    let x = s.register("x", uniform(&[4, 5, 3], 1.0, &mut rng));
    let k = s.register("kernel", uniform(&[3, 3, 3], 1.0, &mut rng));
    let kb = s.register("b", uniform(&[3], 1.0, &mut rng));
    out.push(check(tag("depthwise_conv3x3"), &s, seed, |t| {
        let (xv, kv, bv) = (t.param(x), t.param(k), t.param(kb));
        let y = t.depthwise_conv3x3(xv, kv, bv)?;
        let p = probe_weights(t, y, seed);
        t.probe(y, p)
    })?);

    let mut s = ParamStore::new();
    let x = s.register("x", uniform(&[3, 4, 2], 1.0, &mut rng));
    out.push(check(tag("zero_pad2d"), &s, seed, |t| {
        let xv = t.param(x);
        let y = t.zero_pad2d(xv, 2)?;
        let p = probe_weights(t, y, seed);
        t.probe(y, p)
    })?);

    let mut s = ParamStore::new();
    let x = s.register("x", uniform(&[3, 4, 5], 1.0, &mut rng));
    out.push(check(tag("global_avg_pool"), &s, seed, |t| {
        let xv = t.param(x);
        let y = t.global_avg_pool(xv)?;
        let p = probe_weights(t, y, seed);
        t.probe(y, p)
    })?);

    Ok(out)
}

/// csa, sa_global, mcsa (two window sizes) and msa (with and without a
/// positional bias).
pub fn attention_cases(seed: u64) -> Result<Vec<AuditCase>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0A77);

    let mut s = ParamStore::new();
    let q = s.register("q", uniform(&[1, 4], 1.0, &mut rng));
    let k = s.register("k", uniform(&[9, 4], 1.0, &mut rng));
    let v = s.register("v", uniform(&[9, 4], 1.0, &mut rng));
    out.push(check("attention/csa".into(), &s, seed, |t| {
        let (qv, kv, vv) = (t.param(q), t.param(k), t.param(v));
        let y = t.attention(qv, (kv, vv), 1, None)?;
        let p = probe_weights(t, y, seed);
        t.probe(y, p)
    })?);

    let mut s = ParamStore::new();
    let q = s.register("q", uniform(&[5, 4], 1.0, &mut rng));
    let k = s.register("k", uniform(&[5, 4], 1.0, &mut rng));
    let v = s.register("v", uniform(&[5, 4], 1.0, &mut rng));
    let bias = uniform(&[5, 5], 1.0, &mut rng);
    out.push(check("attention/sa_global".into(), &s, seed, |t| {
        let (qv, kv, vv) = (t.param(q), t.param(k), t.param(v));
        let y = t.attention(qv, (kv, vv), 1, Some(&bias))?;
        let p = probe_weights(t, y, seed);
        t.probe(y, p)
    })?);

    for spec in [WindowSpec::default(), WindowSpec::same(5)?] {
        let mut s = ParamStore::new();
        let x = s.register("x", uniform(&[4, 5, 8], 1.0, &mut rng));
        let params = AttentionParams::register(&mut s, "attn", 8, 2, &mut Initializer::new(seed))?;
        scramble(&mut s, 0.6, &mut rng);
        out.push(check(format!("attention/mcsa[k={}]", spec.k), &s, seed, |t| {
            let xv = t.param(x);
            let y = params.mcsa(t, xv, spec)?;
            let p = probe_weights(t, y, seed);
            t.probe(y, p)
        })?);
    }

    for with_bias in [false, true] {
        let mut s = ParamStore::new();
        let x = s.register("x", uniform(&[2, 3, 8], 1.0, &mut rng));
        let mut params = AttentionParams::register(&mut s, "attn", 8, 4, &mut Initializer::new(seed))?;
        scramble(&mut s, 0.6, &mut rng);
        if with_bias {
            params.pos_bias = Some(uniform(&[6, 6], 1.0, &mut rng));
        }
        let name = if with_bias {
            "attention/msa[pos-bias]"
        } else {
            "attention/msa"
        };
        out.push(check(name.into(), &s, seed, |t| {
            let xv = t.param(x);
            let y = params.msa(t, xv)?;
            let p = probe_weights(t, y, seed);
            t.probe(y, p)
        })?);
    }
    Ok(out)
}

/// ConvFFN, patch embedding and both kinds of transformer block.
pub fn block_cases(seed: u64) -> Result<Vec<AuditCase>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB10C);

    let mut s = ParamStore::new();
    let x = s.register("x", uniform(&[4, 5, 6], 1.0, &mut rng));
    let ffn = ConvFFNParams::register(&mut s, "ffn", 6, 2, &mut Initializer::new(seed))?;
    scramble(&mut s, 0.5, &mut rng);
    out.push(check("block/conv_ffn".into(), &s, seed, |t| {
        let xv = t.param(x);
        let y = ffn.apply(t, xv)?;
        let p = probe_weights(t, y, seed);
        t.probe(y, p)
    })?);

    let mut s = ParamStore::new();
    let x = s.register("x", uniform(&[6, 4, 3], 1.0, &mut rng));
    let embed = PatchEmbedParams::register(&mut s, "embed", 2, 3, 5, &mut Initializer::new(seed))?;
    scramble(&mut s, 0.5, &mut rng);
    out.push(check("block/patch_embed".into(), &s, seed, |t| {
        let xv = t.param(x);
        let y = embed.apply(t, xv)?;
        let p = probe_weights(t, y, seed);
        t.probe(y, p)
    })?);

    for kind in [AttnKind::Central, AttnKind::Global] {
        let mut s = ParamStore::new();
        let x = s.register("x", uniform(&[4, 4, 8], 1.0, &mut rng));
        let block = BlockParams::register(
            &mut s,
            "block",
            8,
            2,
            2,
            kind,
            WindowSpec::default(),
            &mut Initializer::new(seed),
        )?;
        scramble(&mut s, 0.4, &mut rng);
        out.push(check(format!("block/simvit_block[{kind}]"), &s, seed, |t| {
            let xv = t.param(x);
            let y = block.apply(t, xv)?;
            let p = probe_weights(t, y, seed);
            t.probe(y, p)
        })?);
    }
    Ok(out)
}

/// Reduced Micro on one 32×32 image with cross-entropy, at its real init.
pub fn model_cases(seed: u64) -> Result<Vec<AuditCase>> {
    let config = preset_config(Variant::MicroReduced, 10);
    let model = build_model::<f64>(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x30DE1);
    let image = uniform(&[32, 32, 3], 1.0, &mut rng);
    let label = (seed % 10) as usize;
    let case = check("model/micro-reduced[32x32]".into(), &model.store, seed, |t| {
        let x = t.input(image.clone());
        let logits = model.logits_on(t, x)?;
        t.cross_entropy(logits, label)
    })?;
    Ok(vec![case])
}

/// Runs every case in `scope`.
pub fn run_audit(scope: Scope, seed: u64) -> Result<Vec<AuditCase>> {
    let mut cases = Vec::new();
    if scope.includes(Scope::Kernel) {
        for k in 0..KERNEL_SEEDS {
            cases.extend(kernel_cases(seed.wrapping_add(k))?);
        }
    }
    if scope.includes(Scope::Attention) {
        cases.extend(attention_cases(seed)?);
    }
    if scope.includes(Scope::Block) {
        cases.extend(block_cases(seed)?);
    }
    if scope.includes(Scope::Model) {
        cases.extend(model_cases(seed)?);
    }
    Ok(cases)
}
