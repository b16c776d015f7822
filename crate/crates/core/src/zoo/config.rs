use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::Activation;
use crate::params::NormKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerKind {
    RepMixer,
    Attention,
    Pooling,
}

impl fmt::Display for MixerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixerKind::RepMixer => "RM",
            MixerKind::Attention => "SA",
            MixerKind::Pooling => "Pool",
        })
    }
}

/// Where large depthwise kernels replace the small ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LargeKernelSite {
    Ffn,
    PatchEmbed,
}

/// Which stages start with a conditional positional encoding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpePlacement {
    /// Every stage whose mixer is attention.
    AttentionStages,
    Stages(Vec<usize>),
    None,
}

/// A complete model recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub name: String,
    pub channels: [usize; 4],
    pub depths: [usize; 4],
    pub mixers: [MixerKind; 4],
    /// FFN hidden width = channels * expansion.
    pub expansion: usize,
    pub mixer_kernel: usize,
    pub pool_kernel: usize,
    /// Size of the large depthwise kernels.
    pub dw_kernel: usize,
    pub large_kernel: BTreeSet<LargeKernelSite>,
    pub overparam_n: usize,
    pub factorized: bool,
    pub activation: Activation,
    pub norm: NormKind,
    /// Initial value of the RepMixer layer scale; `None` disables it.
    pub layer_scale: Option<f32>,
    pub cpe: CpePlacement,
    pub cpe_kernel: usize,
    pub head_dim: usize,
    pub in_channels: usize,
    pub num_classes: usize,
}

pub const FASTVIT_PRESETS: [&str; 7] = ["T8", "T12", "S12", "SA12", "SA24", "SA36", "MA36"];
pub const HYBRID_PRESETS: [&str; 5] = ["V1", "V2", "V3", "V4", "V5"];
pub const BASELINE_PRESETS: [&str; 2] = ["poolformer-s12-baseline", "metaformer-s12-repmixer"];

use MixerKind::{Attention as SA, Pooling as PL, RepMixer as RM};

impl VariantConfig {
    fn fastvit(name: &str, channels: [usize; 4], depths: [usize; 4], expansion: usize, attention: bool) -> Self {
        Self {
            name: name.to_string(),
            channels,
            depths,
            mixers: [RM, RM, RM, if attention { SA } else { RM }],
            expansion,
            mixer_kernel: 3,
            pool_kernel: 3,
            dw_kernel: 7,
            large_kernel: [LargeKernelSite::Ffn, LargeKernelSite::PatchEmbed].into(),
            overparam_n: 4,
            factorized: true,
            activation: Activation::Gelu,
            norm: NormKind::Batch,
            layer_scale: None,
            cpe: CpePlacement::AttentionStages,
            cpe_kernel: 7,
            head_dim: 32,
            in_channels: 3,
            num_classes: 1000,
        }
    }

    /// Looks up a named preset (case-insensitive).
    pub fn preset(name: &str) -> Result<Self> {
        const S: [usize; 4] = [64, 128, 256, 512];
        let cfg = match name.to_ascii_uppercase().as_str() {
            "T8" => Self::fastvit("T8", [48, 96, 192, 384], [2, 2, 4, 2], 3, false),
            "T12" => Self::fastvit("T12", S, [2, 2, 6, 2], 3, false),
            "S12" => Self::fastvit("S12", S, [2, 2, 6, 2], 4, false),
            "SA12" => Self::fastvit("SA12", S, [2, 2, 6, 2], 4, true),
            "SA24" => Self::fastvit("SA24", S, [4, 4, 12, 4], 4, true),
            "SA36" => Self::fastvit("SA36", S, [6, 6, 18, 6], 4, true),
            "MA36" => Self::fastvit("MA36", [76, 152, 304, 608], [6, 6, 18, 6], 4, true),
            "V1" | "V2" | "V3" => {
                let mut c = Self::fastvit(name, S, [2, 2, 6, 2], 4, false);
                c.name = name.to_ascii_uppercase();
                c.large_kernel.clear();
                c.mixers = match c.name.as_str() {
                    "V1" => [RM, RM, RM, RM],
                    "V2" => [RM, RM, RM, SA],
                    _ => [RM, RM, SA, SA],
                };
                c
            }
            "V4" => Self::fastvit("V4", S, [2, 2, 6, 2], 4, false),
            "V5" => Self::fastvit("V5", S, [2, 2, 6, 2], 4, true),
            "POOLFORMER-S12-BASELINE" => {
                let mut c = Self::fastvit("poolformer-s12-baseline", [64, 128, 320, 512], [2, 2, 6, 2], 4, false);
                c.mixers = [PL; 4];
                c.factorized = false;
                c.overparam_n = 0;
                c.large_kernel.clear();
                c
            }
            "METAFORMER-S12-REPMIXER" => {
                let mut c = Self::preset("poolformer-s12-baseline")?;
                c.name = "metaformer-s12-repmixer".into();
                c.mixers = [RM; 4];
                c
            }
            _ => return Err(Error::UnknownPreset(name.to_string())),
        };
        Ok(cfg)
    }

    pub fn preset_names() -> Vec<&'static str> {
        FASTVIT_PRESETS
            .iter()
            .chain(&HYBRID_PRESETS)
            .chain(&BASELINE_PRESETS)
            .copied()
            .collect()
    }

    pub fn cpe_stages(&self) -> Vec<usize> {
        match &self.cpe {
            CpePlacement::AttentionStages => (0..4).filter(|&i| self.mixers[i] == SA).collect(),
            CpePlacement::Stages(s) => s.clone(),
            CpePlacement::None => Vec::new(),
        }
    }

    pub fn has_large_kernel(&self, site: LargeKernelSite) -> bool {
        self.large_kernel.contains(&site)
    }

    /// Kernel of the depthwise conv inside every FFN, if any.
    pub fn ffn_dw_kernel(&self) -> Option<usize> {
        self.has_large_kernel(LargeKernelSite::Ffn).then_some(self.dw_kernel)
    }

    pub fn patch_embed_kernel(&self) -> usize {
        if self.has_large_kernel(LargeKernelSite::PatchEmbed) {
            self.dw_kernel
        } else {
            3
        }
    }

    /// Same recipe with every RepMixer stage swapped for pooling.
    pub fn with_pooling_mixers(&self) -> Self {
        let mut c = self.clone();
        c.name = format!("{}-pooling", self.name);
        for m in c.mixers.iter_mut() {
            if *m == RM {
                *m = PL;
            }
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.iter().chain(&self.depths).any(|&v| v == 0) {
            return Err(Error::config("channels and depths must be positive"));
        }
        if self.expansion == 0 || self.in_channels == 0 || self.num_classes == 0 {
            return Err(Error::config("expansion, in_channels and num_classes must be positive"));
        }
        for (what, k) in [
            ("mixer_kernel", self.mixer_kernel),
            ("pool_kernel", self.pool_kernel),
            ("dw_kernel", self.dw_kernel),
            ("cpe_kernel", self.cpe_kernel),
        ] {
            if k % 2 == 0 {
                return Err(Error::config(format!("{what} must be odd, got {k}")));
            }
        }
        for (i, m) in self.mixers.iter().enumerate() {
            if *m == SA && (self.head_dim == 0 || self.channels[i] % self.head_dim != 0) {
                return Err(Error::config(format!(
                    "stage {} width {} is not divisible by head_dim {}",
                    i + 1,
                    self.channels[i],
                    self.head_dim
                )));
            }
        }
        if self.factorized {
            for i in 1..4 {
                if self.channels[i] % self.channels[i - 1] != 0 {
                    return Err(Error::config(format!(
                        "factorized patch embedding needs stage {} width {} to be a multiple of {}",
                        i + 1,
                        self.channels[i],
                        self.channels[i - 1]
                    )));
                }
            }
        }
        if let Some(bad) = self.cpe_stages().into_iter().find(|&s| s >= 4) {
            return Err(Error::config(format!("cpe stage index {bad} out of range")));
        }
        Ok(())
    }

    /// Depths proportional to 1:1:3:1 (or 1:1:2:1 for the smallest variant).
    pub fn follows_compute_ratio(&self) -> bool {
        let [a, b, c, d] = self.depths;
        a == b && a == d && (c == 3 * a || c == 2 * a)
    }
}
