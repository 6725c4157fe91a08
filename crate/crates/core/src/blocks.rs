//! Patch embedding, convolutional feed-forward network and the pre-norm
//! transformer block.

use serde::{Deserialize, Serialize};

use crate::attention::{window_count, AttentionParams, WindowSpec};
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::numerics::{Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Rearranges `[H, W, C]` into `[H/P, W/P, P·P·C]`.
///
/// Each patch is flattened in raster order with channels fastest.
pub fn patchify<T: Scalar>(x: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    x.expect_rank("patchify", 3)?;
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    check_divisible(h, w, patch)?;
    let (oh, ow) = (h / patch, w / patch);
    let mut out = Vec::with_capacity(x.len());
    for i in 0..oh {
        for j in 0..ow {
            for py in 0..patch {
                let start = ((i * patch + py) * w + j * patch) * c;
                out.extend_from_slice(&x.data()[start..start + patch * c]);
            }
        }
    }
    Tensor::new([oh, ow, patch * patch * c], out)
}

pub fn patchify_backward<T: Scalar>(dy: &Tensor<T>, input_shape: &[usize], patch: usize) -> Result<Tensor<T>> {
    let (h, w, c) = (input_shape[0], input_shape[1], input_shape[2]);
    check_divisible(h, w, patch)?;
    let (oh, ow) = (h / patch, w / patch);
    if dy.shape() != [oh, ow, patch * patch * c] {
        return Err(Error::Dimension {
            op: "patchify_backward",
            lhs: dy.shape().to_vec(),
            rhs: input_shape.to_vec(),
        });
    }
    let mut dx = vec![T::zero(); h * w * c];
    let mut src = dy.data().chunks_exact(patch * c);
    for i in 0..oh {
        for j in 0..ow {
            for py in 0..patch {
                let start = ((i * patch + py) * w + j * patch) * c;
                dx[start..start + patch * c].copy_from_slice(src.next().expect("sized above"));
            }
        }
    }
    Tensor::new([h, w, c], dx)
}

fn check_divisible(h: usize, w: usize, patch: usize) -> Result<()> {
    if patch == 0 || !h.is_multiple_of(patch) || !w.is_multiple_of(patch) || h == 0 || w == 0 {
        return Err(Error::Geometry(format!(
            "input {h}×{w} is not divisible into {patch}×{patch} patches"
        )));
    }
    Ok(())
}

/// Layer-norm scale and shift.
#[derive(Debug, Clone, Copy)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormParams {
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, width: usize) -> Self {
        Self {
            gamma: store.register(format!("{prefix}.weight"), Tensor::full([width], T::one())),
            beta: store.register(format!("{prefix}.bias"), Tensor::zeros([width])),
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (tape.param(self.gamma), tape.param(self.beta));
        tape.layer_norm(x, g, b)
    }
}

/// Weight and bias of an affine map `[d_in, d_out]`.
#[derive(Debug, Clone, Copy)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        init: &mut Initializer,
    ) -> Self {
        Self {
            weight: store.register(format!("{prefix}.weight"), init.trunc_normal(&[d_in, d_out])),
            bias: store.register(format!("{prefix}.bias"), Tensor::zeros([d_out])),
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.weight), tape.param(self.bias));
        tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PatchEmbedParams {
    pub patch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub proj: LinearParams,
    pub norm: NormParams,
}

impl PatchEmbedParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        patch: usize,
        in_channels: usize,
        out_channels: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        if patch == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::Config(format!("{prefix}: patch and channel counts must be ≥ 1")));
        }
        let d_in = patch * patch * in_channels;
        Ok(Self {
            patch,
            in_channels,
            out_channels,
            proj: LinearParams::register(store, &format!("{prefix}.proj"), d_in, out_channels, init),
            norm: NormParams::register(store, &format!("{prefix}.norm"), out_channels),
        })
    }

    /// Non-overlapping patches → affine projection → layer norm.
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.in_channels {
            return Err(Error::Dimension {
                op: "patch_embed",
                lhs: shape,
                rhs: vec![self.in_channels],
            });
        }
        let patches = tape.patchify(x, self.patch)?;
        let projected = self.proj.apply(tape, patches)?;
        self.norm.apply(tape, projected)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvFFNParams {
    pub expansion: usize,
    pub fc1: LinearParams,
    pub dw_kernel: ParamId,
    pub dw_bias: ParamId,
    pub fc2: LinearParams,
}

impl ConvFFNParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        width: usize,
        expansion: usize,
        init: &mut Initializer,
    ) -> Result<Self> {
        if expansion == 0 {
            return Err(Error::Config(format!("{prefix}: expansion must be ≥ 1")));
        }
        let hidden = width * expansion;
        let fc1 = LinearParams::register(store, &format!("{prefix}.fc1"), width, hidden, init);
        let dw_kernel = store.register(format!("{prefix}.dw.weight"), init.trunc_normal(&[3, 3, hidden]));
        let dw_bias = store.register(format!("{prefix}.dw.bias"), Tensor::zeros([hidden]));
        let fc2 = LinearParams::register(store, &format!("{prefix}.fc2"), hidden, width, init);
        Ok(Self {
            expansion,
            fc1,
            dw_kernel,
            dw_bias,
            fc2,
        })
    }

    /// fc1 → depthwise 3×3 → GELU → fc2.
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let hidden = self.fc1.apply(tape, x)?;
        let (k, b) = (tape.param(self.dw_kernel), tape.param(self.dw_bias));
        let mixed = tape.depthwise_conv3x3(hidden, k, b)?;
        let act = tape.gelu(mixed);
        self.fc2.apply(tape, act)
    }
}

/// Which attention a block uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttnKind {
    /// Central-query attention over sliding windows.
    Central,
    /// Global attention over all tokens.
    Global,
}

impl std::fmt::Display for AttnKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttnKind::Central => "central",
            AttnKind::Global => "global",
        })
    }
}

#[derive(Debug, Clone)]
pub struct BlockParams<T> {
    pub ln1: NormParams,
    pub attn: AttentionParams<T>,
    pub attn_kind: AttnKind,
    pub window: WindowSpec,
    pub ln2: NormParams,
    pub ffn: ConvFFNParams,
}

impl<T: Scalar> BlockParams<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore<T>,
        prefix: &str,
        width: usize,
        heads: usize,
        expansion: usize,
        attn_kind: AttnKind,
        window: WindowSpec,
        init: &mut Initializer,
    ) -> Result<Self> {
        window.validate()?;
        if attn_kind == AttnKind::Central && !(window.s == 1 && window.k == 2 * window.p + 1) {
            return Err(Error::Geometry(format!(
                "{prefix}: central attention needs a resolution-preserving window, got {window:?}"
            )));
        }
        let ln1 = NormParams::register(store, &format!("{prefix}.norm1"), width);
        let attn = AttentionParams::register(store, &format!("{prefix}.attn"), width, heads, init)?;
        let ln2 = NormParams::register(store, &format!("{prefix}.norm2"), width);
        let ffn = ConvFFNParams::register(store, &format!("{prefix}.ffn"), width, expansion, init)?;
        Ok(Self {
            ln1,
            attn,
            attn_kind,
            window,
            ln2,
            ffn,
        })
    }

    /// `h̃ = attn(LN1(h)) + h`, then `ConvFFN(LN2(h̃)) + h̃`.
    pub fn apply(&self, tape: &mut Tape<'_, T>, h_prev: Var) -> Result<Var> {
        let shape = tape.value(h_prev).shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::Geometry(format!("block expects [H, W, C], got {shape:?}")));
        }
        if self.attn_kind == AttnKind::Central && window_count(shape[0], shape[1], self.window)? != (shape[0], shape[1])
        {
            return Err(Error::Geometry(format!("{:?} changes resolution", self.window)));
        }
        let normed = self.ln1.apply(tape, h_prev)?;
        let attended = match self.attn_kind {
            AttnKind::Central => self.attn.mcsa(tape, normed, self.window)?,
            AttnKind::Global => self.attn.msa(tape, normed)?,
        };
        let mid = tape.add(attended, h_prev)?;
        let normed = self.ln2.apply(tape, mid)?;
        let fed = self.ffn.apply(tape, normed)?;
        tape.add(fed, mid)
    }
}

fn eval<T: Scalar>(
    store: &ParamStore<T>,
    x: &Tensor<T>,
    f: impl FnOnce(&mut Tape<'_, T>, Var) -> Result<Var>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new(store);
    let xv = tape.input(x.clone());
    let out = f(&mut tape, xv)?;
    Ok(tape.value(out).clone())
}

pub fn patch_embed<T: Scalar>(store: &ParamStore<T>, x: &Tensor<T>, params: &PatchEmbedParams) -> Result<Tensor<T>> {
    eval(store, x, |t, v| params.apply(t, v))
}

pub fn conv_ffn<T: Scalar>(store: &ParamStore<T>, x: &Tensor<T>, params: &ConvFFNParams) -> Result<Tensor<T>> {
    eval(store, x, |t, v| params.apply(t, v))
}

pub fn simvit_block<T: Scalar>(
    store: &ParamStore<T>,
    h_prev: &Tensor<T>,
    params: &BlockParams<T>,
) -> Result<Tensor<T>> {
    eval(store, h_prev, |t, v| params.apply(t, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::kernels::{gelu, linear};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
    }

    fn randomize(store: &mut ParamStore<f64>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in store.params_mut() {
            p.value = Tensor::from_fn(p.value.shape().to_vec(), |_| rng.gen_range(-0.5..0.5));
        }
    }

    #[test]
    fn patchify_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_t(&[4, 6, 3], &mut rng);
        let p = patchify(&x, 2).unwrap();
        assert_eq!(p.shape(), &[2, 3, 12]);
        assert!(patchify_backward(&p, x.shape(), 2).unwrap().bit_eq(&x));
        let err = patchify(&x, 4).unwrap_err().to_string();
        assert!(err.contains("4×6") && err.contains("4×4"), "{err}");
    }

    #[test]
    fn patch_embed_shapes() {
        let mut store = ParamStore::<f32>::new();
        let mut init = Initializer::new(0);
        let pe = PatchEmbedParams::register(&mut store, "pe", 4, 3, 2, &mut init).unwrap();
        let y = patch_embed(&store, &Tensor::zeros([8, 8, 3]), &pe).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
    }

    #[test]
    fn patch_embed_vs_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let pe = PatchEmbedParams::register(&mut store, "pe", 2, 2, 3, &mut Initializer::new(0)).unwrap();
        randomize(&mut store, 3);
        let x = rand_t(&[4, 4, 2], &mut rng);
        let y = patch_embed(&store, &x, &pe).unwrap();
        let (w, b) = (store.value(pe.proj.weight), store.value(pe.proj.bias));
        let (g, be) = (store.value(pe.norm.gamma), store.value(pe.norm.beta));
        for i in 0..2 {
            for j in 0..2 {
                let mut flat = Vec::new();
                for py in 0..2 {
                    for px in 0..2 {
                        for c in 0..2 {
                            flat.push(x.data()[((2 * i + py) * 4 + 2 * j + px) * 2 + c]);
                        }
                    }
                }
                let mut z = [0.0; 3];
                for (o, zo) in z.iter_mut().enumerate() {
                    *zo = b.data()[o] + (0..8).map(|q| flat[q] * w.data()[q * 3 + o]).sum::<f64>();
                }
                let mean = z.iter().sum::<f64>() / 3.0;
                let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
                for (o, zo) in z.iter().enumerate() {
                    let e = (zo - mean) / (var + 1e-5).sqrt() * g.data()[o] + be.data()[o];
                    assert!((y.data()[(i * 2 + j) * 3 + o] - e).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn constant_image_gives_constant_tokens() {
        let mut store = ParamStore::<f64>::new();
        let pe = PatchEmbedParams::register(&mut store, "pe", 4, 3, 8, &mut Initializer::new(4)).unwrap();
        let x = Tensor::from_fn([16, 16, 3], |i| [0.2, -0.4, 0.9][i % 3]);
        let y = patch_embed(&store, &x, &pe).unwrap();
        let first = &y.data()[..8];
        for tok in y.data().chunks_exact(8) {
            for (a, b) in tok.iter().zip(first) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn conv_ffn_zero_and_shapes() {
        let mut store = ParamStore::<f64>::new();
        let ffn = ConvFFNParams::register(&mut store, "f", 4, 2, &mut Initializer::new(0)).unwrap();
        for p in store.params_mut() {
            p.value.data_mut().fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = conv_ffn(&store, &rand_t(&[3, 3, 4], &mut rng), &ffn).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let mut s32 = ParamStore::<f32>::new();
        let ffn = ConvFFNParams::register(&mut s32, "f", 64, 8, &mut Initializer::new(0)).unwrap();
        assert_eq!(s32.value(ffn.fc1.weight).shape(), &[64, 512]);
        let y = conv_ffn(&s32, &Tensor::zeros([28, 28, 64]), &ffn).unwrap();
        assert_eq!(y.shape(), &[28, 28, 64]);
    }

    #[test]
    fn conv_ffn_single_token_sees_center_tap() {
        let mut store = ParamStore::<f64>::new();
        let ffn = ConvFFNParams::register(&mut store, "f", 3, 2, &mut Initializer::new(0)).unwrap();
        randomize(&mut store, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_t(&[1, 1, 3], &mut rng);
        let y = conv_ffn(&store, &x, &ffn).unwrap();

        let h = linear(&x, store.value(ffn.fc1.weight), store.value(ffn.fc1.bias)).unwrap();
        let k = store.value(ffn.dw_kernel);
        let db = store.value(ffn.dw_bias);
        let mixed = Tensor::from_fn([1, 1, 6], |c| db.data()[c] + k.data()[4 * 6 + c] * h.data()[c]);
        let expect = linear(&gelu(&mixed), store.value(ffn.fc2.weight), store.value(ffn.fc2.bias)).unwrap();
        assert!(y.max_abs_diff(&expect) <= 1e-14);
    }

    #[test]
    fn zero_branches_are_identity() {
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
                &mut Initializer::new(1),
            )
            .unwrap();
            let ids: Vec<_> = store.ids().filter(|&id| !store.name(id).contains("norm")).collect();
            for id in ids {
                store.value_mut(id).data_mut().fill(0.0);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let x = rand_t(&[4, 4, 8], &mut rng);
            let y = simvit_block(&store, &x, &block).unwrap();
            assert!(y.bit_eq(&x));
        }
    }

    #[test]
    fn block_preserves_shape() {
        let mut store = ParamStore::<f32>::new();
        let block = BlockParams::register(
            &mut store,
            "b",
            32,
            1,
            8,
            AttnKind::Central,
            WindowSpec::default(),
            &mut Initializer::new(1),
        )
        .unwrap();
        let y = simvit_block(&store, &Tensor::full([56, 56, 32], 0.1), &block).unwrap();
        assert_eq!(y.shape(), &[56, 56, 32]);
        assert!(y.all_finite());
    }

    #[test]
    fn central_block_rejects_bad_window() {
        let mut store = ParamStore::<f32>::new();
        let r = BlockParams::register(
            &mut store,
            "b",
            8,
            1,
            1,
            AttnKind::Central,
            WindowSpec { k: 3, p: 0, s: 1 },
            &mut Initializer::new(1),
        );
        assert!(r.is_err());
    }
}
