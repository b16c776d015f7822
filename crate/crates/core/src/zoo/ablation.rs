//! Ablation ladders expressed as config edits, plus diffing tools that show
//! what each edit changes in the generated structure.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;

use super::config::{LargeKernelSite, MixerKind, VariantConfig};
use super::model::Model;

/// One rung of the ablation ladder: a config and the input size it is evaluated at.
#[derive(Clone, Debug, PartialEq)]
pub struct LadderStep {
    pub label: &'static str,
    pub config: VariantConfig,
    pub input_size: usize,
}

/// From the PoolFormer-S12 baseline to FastViT-S12, one change per rung.
pub fn ablation_ladder() -> Vec<LadderStep> {
    let mut steps = Vec::new();
    let mut cfg = VariantConfig::preset("poolformer-s12-baseline").expect("baseline preset");
    let mut push = |label, cfg: &VariantConfig, size| {
        let mut c = cfg.clone();
        c.name = format!("ladder-{}", steps.len());
        steps.push(LadderStep {
            label,
            config: c,
            input_size: size,
        });
    };
    push("baseline", &cfg, 224);
    push("input 224 -> 256", &cfg, 256);
    cfg.mixers = [MixerKind::RepMixer; 4];
    push("pooling -> repmixer", &cfg, 256);
    cfg.channels[2] = 256;
    push("stage-3 width 320 -> 256", &cfg, 256);
    cfg.factorized = true;
    push("factorized dense conv", &cfg, 256);
    cfg.overparam_n = 4;
    push("train-time overparameterization", &cfg, 256);
    cfg.large_kernel.insert(LargeKernelSite::Ffn);
    push("large-kernel conv ffn", &cfg, 256);
    cfg.large_kernel.insert(LargeKernelSite::PatchEmbed);
    push("large-kernel patch embedding", &cfg, 256);
    steps
}

/// Names of the top-level config fields that differ, ignoring `name`.
pub fn config_delta(a: &VariantConfig, b: &VariantConfig) -> Vec<String> {
    let to_map = |c: &VariantConfig| match serde_json::to_value(c).expect("config serializes") {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("config serializes to an object"),
    };
    let (ma, mb) = (to_map(a), to_map(b));
    ma.iter()
        .filter(|(k, v)| k.as_str() != "name" && mb.get(k.as_str()) != Some(*v))
        .map(|(k, _)| k.clone())
        .collect()
}

/// Parameter-level difference between two generated structures.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StructureDiff {
    pub added: Vec<String>,
    pub removed: Vec<String>,
    /// Present in both with different dims.
    pub reshaped: Vec<String>,
}

impl StructureDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.reshaped.is_empty()
    }

    /// Coarse layer groups touched: stem, downsample, cpe, mixer, ffn or head.
    pub fn groups(&self) -> BTreeSet<&'static str> {
        self.added
            .iter()
            .chain(&self.removed)
            .chain(&self.reshaped)
            .map(|n| layer_group(n))
            .collect()
    }

    /// Stage indices touched; the stem counts as stage 0, the head as stage 3.
    pub fn stages(&self) -> BTreeSet<usize> {
        self.added
            .iter()
            .chain(&self.removed)
            .chain(&self.reshaped)
            .map(|n| {
                if n.starts_with("stem") {
                    0
                } else if n.starts_with("head") {
                    3
                } else {
                    n.split('.').nth(1).and_then(|s| s.parse().ok()).unwrap_or(0)
                }
            })
            .collect()
    }
}

pub fn layer_group(name: &str) -> &'static str {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        ["stem", ..] => "stem",
        ["head", ..] => "head",
        ["stages", _, "downsample", ..] => "downsample",
        ["stages", _, "cpe", ..] => "cpe",
        ["stages", _, "blocks", _, "mixer", ..] => "mixer",
        ["stages", _, "blocks", _, "ffn", ..] => "ffn",
        _ => "other",
    }
}

fn shapes(model: &Model) -> BTreeMap<String, Vec<usize>> {
    let mut out = BTreeMap::new();
    model.visit_params(&mut |name, dims, _| {
        out.insert(name.to_string(), dims.to_vec());
    });
    out
}

pub fn structure_diff(a: &Model, b: &Model) -> StructureDiff {
    let (sa, sb) = (shapes(a), shapes(b));
    let mut diff = StructureDiff::default();
    for (name, dims) in &sa {
        match sb.get(name) {
            None => diff.removed.push(name.clone()),
            Some(d) if d != dims => diff.reshaped.push(name.clone()),
            Some(_) => {}
        }
    }
    diff.added = sb.keys().filter(|k| !sa.contains_key(*k)).cloned().collect();
    diff
}

/// Builds both configs and diffs their train structures.
pub fn config_structure_diff(a: &VariantConfig, b: &VariantConfig) -> Result<StructureDiff> {
    Ok(structure_diff(&Model::build(a, 0)?, &Model::build(b, 0)?))
}

/// Hybrid-stage variants with the variant each is one edit away from.
pub fn hybrid_variant_parents() -> Vec<(&'static str, &'static str)> {
    vec![("V1", "S12"), ("V2", "V1"), ("V3", "V1"), ("V4", "V1"), ("V5", "V4")]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_ends_at_s12() {
        let last = ablation_ladder().pop().unwrap();
        assert!(config_delta(&last.config, &VariantConfig::preset("S12").unwrap()).is_empty());
    }

    #[test]
    fn delta_ignores_name() {
        let a = VariantConfig::preset("V4").unwrap();
        let b = VariantConfig::preset("S12").unwrap();
        assert!(config_delta(&a, &b).is_empty());
    }

    #[test]
    fn layer_groups() {
        assert_eq!(layer_group("stages.2.blocks.3.mixer.dw.weight"), "mixer");
        assert_eq!(layer_group("stages.1.downsample.0.kxk0.conv.weight"), "downsample");
        assert_eq!(layer_group("head.bias"), "head");
    }
}
