//! Four-stage pyramid assembly and the named configurations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::WindowSpec;
use crate::blocks::{AttnKind, BlockParams, LinearParams, NormParams, PatchEmbedParams};
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::numerics::{Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Input channels of the RGB image.
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub patch: usize,
    pub channels: usize,
    pub heads: usize,
    pub expansion: usize,
    pub depth: usize,
    pub attn_kind: AttnKind,
    pub window: WindowSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant_name: String,
    pub stages: Vec<StageConfig>,
    pub num_classes: usize,
    /// Adds a learned additive map to the first stage's tokens.
    pub pos_embed: bool,
    /// Input resolution the position embedding is sized for.
    pub image_size: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Micro,
    Tiny,
    Small,
    Medium,
    Large,
    /// Micro widths with one block per stage, for audits and toy training.
    MicroReduced,
}

impl Variant {
    pub const NAMED: [Variant; 5] = [
        Variant::Micro,
        Variant::Tiny,
        Variant::Small,
        Variant::Medium,
        Variant::Large,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Micro => "micro",
            Variant::Tiny => "tiny",
            Variant::Small => "small",
            Variant::Medium => "medium",
            Variant::Large => "large",
            Variant::MicroReduced => "micro-reduced",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "micro" => Ok(Variant::Micro),
            "tiny" => Ok(Variant::Tiny),
            "small" => Ok(Variant::Small),
            "medium" => Ok(Variant::Medium),
            "large" => Ok(Variant::Large),
            "micro-reduced" | "micro_reduced" => Ok(Variant::MicroReduced),
            _ => Err(Error::UnknownVariant(s.to_string())),
        }
    }
}

const PATCHES: [usize; 4] = [4, 2, 2, 2];
const HEADS: [usize; 4] = [1, 2, 5, 8];

/// The published configuration for `variant`.
pub fn preset_config(variant: Variant, num_classes: usize) -> ModelConfig {
    let (channels, depths, expansions): ([usize; 4], [usize; 4], [usize; 4]) = match variant {
        Variant::Micro => ([32, 64, 160, 256], [2, 3, 3, 2], [8, 8, 4, 4]),
        Variant::MicroReduced => ([32, 64, 160, 256], [1, 1, 1, 1], [8, 8, 4, 4]),
        Variant::Tiny => ([64, 128, 320, 512], [2, 4, 3, 2], [8, 8, 4, 4]),
        Variant::Small => ([64, 128, 320, 512], [3, 6, 13, 3], [8, 8, 4, 4]),
        Variant::Medium => ([64, 128, 320, 512], [3, 8, 30, 3], [8, 8, 4, 4]),
        Variant::Large => ([64, 128, 320, 512], [3, 8, 40, 3], [4, 4, 4, 4]),
    };
    let stages = (0..4)
        .map(|i| StageConfig {
            patch: PATCHES[i],
            channels: channels[i],
            heads: HEADS[i],
            expansion: expansions[i],
            depth: depths[i],
            attn_kind: if i < 3 { AttnKind::Central } else { AttnKind::Global },
            window: WindowSpec::default(),
        })
        .collect();
    ModelConfig {
        variant_name: variant.name().to_string(),
        stages,
        num_classes,
        pos_embed: false,
        image_size: (224, 224),
    }
}

impl ModelConfig {
    pub fn preset(variant: Variant, num_classes: usize) -> Self {
        preset_config(variant, num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("at least one stage is required".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be ≥ 1".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            let n = i + 1;
            if s.patch == 0 || s.channels == 0 || s.expansion == 0 || s.heads == 0 {
                return Err(Error::Config(format!(
                    "stage {n}: patch, channels, heads and expansion must be ≥ 1"
                )));
            }
            if s.channels % s.heads != 0 {
                return Err(Error::Config(format!(
                    "stage {n}: channels {} not divisible by heads {}",
                    s.channels, s.heads
                )));
            }
            s.window.validate()?;
            if s.attn_kind == AttnKind::Central && !(s.window.s == 1 && s.window.k == 2 * s.window.p + 1) {
                return Err(Error::Config(format!(
                    "stage {n}: central attention window {:?} does not preserve resolution",
                    s.window
                )));
            }
        }
        if self.pos_embed {
            let (h, w) = self.image_size;
            let p = self.stages[0].patch;
            if h == 0 || w == 0 || h % p != 0 || w % p != 0 {
                return Err(Error::Config(format!(
                    "image size {h}×{w} does not divide into stage-1 patches of {p}"
                )));
            }
        }
        Ok(())
    }

    /// Overall downsampling factor (product of patch sizes).
    pub fn stride(&self) -> usize {
        self.stages.iter().map(|s| s.patch).product()
    }

    pub fn final_channels(&self) -> usize {
        self.stages.last().map_or(IMAGE_CHANNELS, |s| s.channels)
    }

    /// Checks that an `h×w` input divides through every stage.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let stride = self.stride();
        if h == 0 || w == 0 || !h.is_multiple_of(stride) || !w.is_multiple_of(stride) {
            return Err(Error::Geometry(format!(
                "input {h}×{w} is not divisible by the total patch stride {stride}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StageParams<T> {
    pub embed: PatchEmbedParams,
    pub pos_embed: Option<ParamId>,
    pub blocks: Vec<BlockParams<T>>,
}

/// Multi-scale stage outputs, finest first.
#[derive(Debug, Clone)]
pub struct FeaturePyramid<T> {
    pub maps: Vec<Tensor<T>>,
}

impl<T: Scalar> FeaturePyramid<T> {
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.maps.iter().map(|m| m.shape().to_vec()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub stages: Vec<StageParams<T>>,
    pub head_norm: NormParams,
    pub head: LinearParams,
}

/// Registers every parameter of `config`; weights are drawn from a
/// truncated normal seeded by `seed`, biases are zero, norms are identity.
pub fn build_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<T>> {
    config.validate()?;
    let mut init = Initializer::new(seed);
    let mut store = ParamStore::new();
    let mut stages = Vec::with_capacity(config.stages.len());
    let mut in_ch = IMAGE_CHANNELS;
    for (i, sc) in config.stages.iter().enumerate() {
        let prefix = format!("stages.{i}");
        let embed = PatchEmbedParams::register(
            &mut store,
            &format!("{prefix}.embed"),
            sc.patch,
            in_ch,
            sc.channels,
            &mut init,
        )?;
        let pos_embed = (i == 0 && config.pos_embed).then(|| {
            let (h, w) = config.image_size;
            let shape = [h / sc.patch, w / sc.patch, sc.channels];
            store.register(format!("{prefix}.pos_embed"), init.trunc_normal(&shape))
        });
        let blocks = (0..sc.depth)
            .map(|j| {
                BlockParams::register(
                    &mut store,
                    &format!("{prefix}.blocks.{j}"),
                    sc.channels,
                    sc.heads,
                    sc.expansion,
                    sc.attn_kind,
                    sc.window,
                    &mut init,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        stages.push(StageParams {
            embed,
            pos_embed,
            blocks,
        });
        in_ch = sc.channels;
    }
    let head_norm = NormParams::register(&mut store, "head.norm", in_ch);
    let head = LinearParams::register(&mut store, "head.fc", in_ch, config.num_classes, &mut init);
    Ok(Model {
        config: config.clone(),
        store,
        stages,
        head_norm,
        head,
    })
}

impl<T: Scalar> Model<T> {
    pub fn num_params(&self) -> usize {
        self.store.num_elements()
    }

    /// Records the stage outputs of `image` on `tape`.
    pub fn features_on(&self, tape: &mut Tape<'_, T>, image: Var) -> Result<Vec<Var>> {
        let shape = tape.value(image).shape().to_vec();
        if shape.len() != 3 || shape[2] != IMAGE_CHANNELS {
            return Err(Error::Geometry(format!(
                "image must be [H, W, {IMAGE_CHANNELS}], got {shape:?}"
            )));
        }
        self.config.check_input(shape[0], shape[1])?;
        let mut x = image;
        let mut maps = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            x = stage.embed.apply(tape, x)?;
            if let Some(pe) = stage.pos_embed {
                let pe = tape.param(pe);
                x = tape.add(x, pe).map_err(|_| {
                    Error::Geometry(format!(
                        "position embedding is sized for {:?} inputs",
                        self.config.image_size
                    ))
                })?;
            }
            for block in &stage.blocks {
                x = block.apply(tape, x)?;
            }
            maps.push(x);
        }
        Ok(maps)
    }

    /// Records LN → average pool → linear on top of the last stage.
    pub fn logits_on(&self, tape: &mut Tape<'_, T>, image: Var) -> Result<Var> {
        let maps = self.features_on(tape, image)?;
        let last = *maps.last().expect("validated non-empty");
        let normed = self.head_norm.apply(tape, last)?;
        let pooled = tape.global_avg_pool(normed)?;
        self.head.apply(tape, pooled)
    }

    pub fn forward_features(&self, image: &Tensor<T>) -> Result<FeaturePyramid<T>> {
        let mut tape = Tape::new(&self.store);
        let x = tape.input(image.clone());
        let maps = self.features_on(&mut tape, x)?;
        Ok(FeaturePyramid {
            maps: maps.into_iter().map(|v| tape.value(v).clone()).collect(),
        })
    }

    pub fn forward_classify(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new(&self.store);
        let x = tape.input(image.clone());
        let logits = self.logits_on(&mut tape, x)?;
        Ok(tape.value(logits).clone())
    }
}

pub fn forward_features<T: Scalar>(model: &Model<T>, image: &Tensor<T>) -> Result<FeaturePyramid<T>> {
    model.forward_features(image)
}

pub fn forward_classify<T: Scalar>(model: &Model<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    model.forward_classify(image)
}
