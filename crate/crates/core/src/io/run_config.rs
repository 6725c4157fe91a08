//! TOML run configuration: a preset plus ablation overrides, or an explicit
//! stage table.
//!
//! ```toml
//! variant = "micro"
//! num_classes = 1000
//! seed = 0
//! depths = [2, 2, 2, 2]   # per-stage block counts
//! window = [5, 5, 5]      # window side per central stage
//! pos_embed = true
//! image_size = [224, 224]
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::attention::WindowSpec;
use crate::blocks::AttnKind;
use crate::error::{Error, Result};
use crate::model::{preset_config, ModelConfig, StageConfig, Variant};

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StageTable {
    pub patch: usize,
    pub channels: usize,
    pub heads: usize,
    pub expansion: usize,
    pub depth: usize,
    pub attn: AttnKind,
    #[serde(default)]
    pub window: Option<WindowSpec>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Option<String>,
    #[serde(default)]
    pub stages: Option<Vec<StageTable>>,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub seed: u64,
    pub depths: Option<Vec<usize>>,
    pub window: Option<Vec<usize>>,
    #[serde(default)]
    pub pos_embed: bool,
    pub image_size: Option<[usize; 2]>,
}

fn default_classes() -> usize {
    1000
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("field `{name}`: {msg}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_model_config(&self) -> Result<ModelConfig> {
        let mut cfg = match (&self.variant, &self.stages) {
            (Some(_), Some(_)) => return Err(field("stages", "give either `variant` or `stages`, not both")),
            (None, None) => return Err(field("variant", "missing (or give a `stages` table)")),
            (Some(v), None) => {
                let variant: Variant = v.parse().map_err(|e| field("variant", e))?;
                preset_config(variant, self.num_classes)
            }
            (None, Some(tables)) => ModelConfig {
                variant_name: "custom".into(),
                stages: tables
                    .iter()
                    .map(|t| StageConfig {
                        patch: t.patch,
                        channels: t.channels,
                        heads: t.heads,
                        expansion: t.expansion,
                        depth: t.depth,
                        attn_kind: t.attn,
                        window: t.window.unwrap_or_default(),
                    })
                    .collect(),
                num_classes: self.num_classes,
                pos_embed: false,
                image_size: (224, 224),
            },
        };
        if let Some(depths) = &self.depths {
            if depths.len() != cfg.stages.len() {
                return Err(field(
                    "depths",
                    format!("expected {} entries, got {}", cfg.stages.len(), depths.len()),
                ));
            }
            for (s, &d) in cfg.stages.iter_mut().zip(depths) {
                s.depth = d;
            }
            cfg.variant_name = format!("{}[depth {}]", cfg.variant_name, join(depths));
        }
        if let Some(sides) = &self.window {
            let central: Vec<&mut StageConfig> = cfg
                .stages
                .iter_mut()
                .filter(|s| s.attn_kind == AttnKind::Central)
                .collect();
            if sides.len() != central.len() {
                return Err(field(
                    "window",
                    format!(
                        "expected {} entries (one per central stage), got {}",
                        central.len(),
                        sides.len()
                    ),
                ));
            }
            for (s, &k) in central.into_iter().zip(sides) {
                s.window = WindowSpec::same(k).map_err(|e| field("window", e))?;
            }
            cfg.variant_name = format!("{}[window {}]", cfg.variant_name, join(sides));
        }
        cfg.pos_embed = self.pos_embed;
        if let Some([h, w]) = self.image_size {
            cfg.image_size = (h, w);
        }
        if cfg.pos_embed {
            cfg.variant_name = format!("{}[pos-embed]", cfg.variant_name);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("-")
}
