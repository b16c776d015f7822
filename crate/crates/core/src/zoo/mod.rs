//! Preset configurations, model assembly and ablation tooling.

mod ablation;
mod config;
mod model;

pub use ablation::{
    ablation_ladder, config_delta, config_structure_diff, hybrid_variant_parents, layer_group, structure_diff,
    LadderStep, StructureDiff,
};
pub use config::{
    CpePlacement, LargeKernelSite, MixerKind, VariantConfig, BASELINE_PRESETS, FASTVIT_PRESETS, HYBRID_PRESETS,
};
pub use model::{build_variant, MetaBlock, Model, Stage, VariantSource, OUTPUT_STRIDE};
