//! Closed-form parameter and multiply-accumulate accounting.
//!
//! MAC convention: an affine map costs `d_in·d_out` per output position,
//! attention costs `n·d̂` per head per query for both `q·Kᵀ` and the
//! weighted sum over `V`, and the depthwise 3×3 conv costs 9 per channel per
//! position. Biases, norms, softmax and GELU are not counted.

use std::fmt::Write as _;
use std::iter::Sum;
use std::ops::Add;

use crate::blocks::AttnKind;
use crate::error::Result;
use crate::model::{ModelConfig, IMAGE_CHANNELS};

/// Counts split by component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Breakdown {
    pub embedding: u64,
    pub attention: u64,
    pub ffn: u64,
    pub norms: u64,
    pub head: u64,
}

impl Breakdown {
    pub fn total(&self) -> u64 {
        self.embedding + self.attention + self.ffn + self.norms + self.head
    }
}

impl Add for Breakdown {
    type Output = Breakdown;

    fn add(self, o: Breakdown) -> Breakdown {
        Breakdown {
            embedding: self.embedding + o.embedding,
            attention: self.attention + o.attention,
            ffn: self.ffn + o.ffn,
            norms: self.norms + o.norms,
            head: self.head + o.head,
        }
    }
}

impl Sum for Breakdown {
    fn sum<I: Iterator<Item = Breakdown>>(iter: I) -> Breakdown {
        iter.fold(Breakdown::default(), Add::add)
    }
}

/// Per-stage counts plus the classification head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub stages: Vec<Breakdown>,
    pub head: Breakdown,
}

impl CostReport {
    pub fn by_component(&self) -> Breakdown {
        self.stages.iter().copied().sum::<Breakdown>() + self.head
    }

    pub fn total(&self) -> u64 {
        self.by_component().total()
    }

    /// Sum over a range of stages (0-based).
    pub fn stages_total(&self, range: std::ops::Range<usize>) -> u64 {
        self.stages[range].iter().map(Breakdown::total).sum()
    }
}

/// Exact number of learnable scalars implied by `config`.
pub fn count_params(config: &ModelConfig) -> Result<CostReport> {
    config.validate()?;
    let mut stages = Vec::with_capacity(config.stages.len());
    let mut in_ch = IMAGE_CHANNELS as u64;
    for (i, s) in config.stages.iter().enumerate() {
        let (p, c, e, l) = (s.patch as u64, s.channels as u64, s.expansion as u64, s.depth as u64);
        let mut embedding = p * p * in_ch * c + c;
        if i == 0 && config.pos_embed {
            let (h, w) = config.image_size;
            embedding += (h as u64 / p) * (w as u64 / p) * c;
        }
        let hidden = e * c;
        stages.push(Breakdown {
            embedding,
            attention: l * 4 * (c * c + c),
            ffn: l * ((c * hidden + hidden) + (9 * hidden + hidden) + (hidden * c + c)),
            norms: 2 * c + l * 4 * c,
            head: 0,
        });
        in_ch = c;
    }
    let k = config.num_classes as u64;
    let head = Breakdown {
        norms: 2 * in_ch,
        head: in_ch * k + k,
        ..Breakdown::default()
    };
    Ok(CostReport { stages, head })
}

/// Multiply-accumulates for one `h×w` image.
pub fn count_macs(config: &ModelConfig, h: usize, w: usize) -> Result<CostReport> {
    config.validate()?;
    config.check_input(h, w)?;
    let mut stages = Vec::with_capacity(config.stages.len());
    let (mut gh, mut gw) = (h as u64, w as u64);
    let mut in_ch = IMAGE_CHANNELS as u64;
    for s in &config.stages {
        let (p, c, e, l) = (s.patch as u64, s.channels as u64, s.expansion as u64, s.depth as u64);
        gh /= p;
        gw /= p;
        let tokens = gh * gw;
        let keys = match s.attn_kind {
            AttnKind::Central => s.window.cells() as u64,
            AttnKind::Global => tokens,
        };
        stages.push(Breakdown {
            embedding: tokens * p * p * in_ch * c,
            attention: l * tokens * (4 * c * c + 2 * keys * c),
            ffn: l * tokens * (2 * e * c * c + 9 * e * c),
            norms: 0,
            head: 0,
        });
        in_ch = c;
    }
    let head = Breakdown {
        head: in_ch * config.num_classes as u64,
        ..Breakdown::default()
    };
    Ok(CostReport { stages, head })
}

/// Tab-separated per-stage table with a header, a head row and a totals row.
pub fn describe(config: &ModelConfig, h: usize, w: usize) -> Result<String> {
    let params = count_params(config)?;
    let macs = count_macs(config, h, w)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {} ({} classes, input {h}x{w})",
        config.variant_name, config.num_classes
    );
    out.push_str("stage\tP\tC\tN\tE\tL\tattn\twindow\tparams\tmacs\n");
    for (i, s) in config.stages.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}/{}/{}\t{}\t{}",
            i + 1,
            s.patch,
            s.channels,
            s.heads,
            s.expansion,
            s.depth,
            s.attn_kind,
            s.window.k,
            s.window.p,
            s.window.s,
            params.stages[i].total(),
            macs.stages[i].total()
        );
    }
    let _ = writeln!(
        out,
        "head\t-\t{}\t-\t-\t-\t-\t-\t{}\t{}",
        config.num_classes,
        params.head.total(),
        macs.head.total()
    );
    let _ = writeln!(
        out,
        "total\t-\t-\t-\t-\t-\t-\t-\t{}\t{}\t({:.2}M params, {:.2} GMACs)",
        params.total(),
        macs.total(),
        params.total() as f64 / 1e6,
        macs.total() as f64 / 1e9
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::WindowSpec;
    use crate::model::{preset_config, StageConfig, Variant};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            variant_name: "degenerate".into(),
            stages: vec![StageConfig {
                patch: 4,
                channels: 4,
                heads: 1,
                expansion: 1,
                depth: 1,
                attn_kind: AttnKind::Central,
                window: WindowSpec::default(),
            }],
            num_classes: 2,
            pos_embed: false,
            image_size: (224, 224),
        }
    }

    #[test]
    fn degenerate_config_hand_sum() {
        // embed 4·4·3·4 + 4, embed norm 8, ln1+ln2 16, attn 4·(16+4),
        // ffn (16+4) + (36+4) + (16+4), head norm 8, head 4·2 + 2.
        let hand = (192 + 4) + 8 + 16 + 80 + (20 + 40 + 20) + 8 + 10;
        assert_eq!(count_params(&tiny_config()).unwrap().total(), hand);
    }

    #[test]
    fn zero_depth_macs_are_embedding_plus_head() {
        let mut c = preset_config(Variant::Micro, 1000);
        for s in &mut c.stages {
            s.depth = 0;
        }
        let m = count_macs(&c, 64, 64).unwrap();
        let hand = 16 * 16 * (16 * 3 * 32)
            + 8 * 8 * (4 * 32 * 64)
            + 4 * 4 * (4 * 64 * 160)
            + 2 * 2 * (4 * 160 * 256)
            + 256 * 1000;
        assert_eq!(m.total(), hand);
    }

    #[test]
    fn totals_equal_breakdown_sums() {
        let c = preset_config(Variant::Small, 1000);
        for r in [count_params(&c).unwrap(), count_macs(&c, 224, 224).unwrap()] {
            let by_stage: u64 = r.stages.iter().map(Breakdown::total).sum::<u64>() + r.head.total();
            assert_eq!(r.total(), by_stage);
            assert_eq!(r.by_component().total(), by_stage);
        }
    }

    #[test]
    fn describe_table() {
        let c = preset_config(Variant::Micro, 1000);
        let a = describe(&c, 224, 224).unwrap();
        assert_eq!(a, describe(&c, 224, 224).unwrap());
        let rows: Vec<&str> = a.lines().collect();
        assert_eq!(
            rows.iter()
                .filter(|r| r.chars().next().is_some_and(|ch| ch.is_ascii_digit()))
                .count(),
            4
        );
        let totals: Vec<&str> = rows.last().unwrap().split('\t').collect();
        assert_eq!(totals[0], "total");
        assert_eq!(totals[8].parse::<u64>().unwrap(), count_params(&c).unwrap().total());
        assert_eq!(
            totals[9].parse::<u64>().unwrap(),
            count_macs(&c, 224, 224).unwrap().total()
        );
    }

    #[test]
    fn pos_embed_adds_stage_one_grid() {
        let mut c = preset_config(Variant::Micro, 1000);
        let base = count_params(&c).unwrap().total();
        c.pos_embed = true;
        assert_eq!(count_params(&c).unwrap().total(), base + 56 * 56 * 32);
    }
}
