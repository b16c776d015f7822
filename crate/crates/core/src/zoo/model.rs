use crate::blocks::{Block, BlockKind, BlockSpec, FeatureShape, Mode, ReparamNotice};
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::ops::{global_avg_pool, linear};
use crate::params::ConvParams;
use crate::tensor::{Tensor, Tokens};

use super::config::{MixerKind, VariantConfig};

/// Total downsampling factor between input and last stage.
pub const OUTPUT_STRIDE: usize = 32;

/// Token mixer followed by a ConvFFN.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaBlock {
    pub mixer: Block,
    pub ffn: Block,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    /// Patch embedding into this stage; absent for the first stage.
    pub downsample: Option<Block>,
    pub cpe: Option<Block>,
    pub blocks: Vec<MetaBlock>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: VariantConfig,
    pub mode: Mode,
    pub stem: Block,
    pub stages: Vec<Stage>,
    /// Classifier applied to the pooled features, stored as a 1x1 conv.
    pub head: ConvParams,
}

impl Model {
    /// Builds the train-time structure with seeded weights.
    pub fn build(config: &VariantConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let c = config;
        let mut init = Initializer::new(seed);
        let stem = Block::init(
            &BlockSpec::Stem {
                in_channels: c.in_channels,
                out_channels: c.channels[0],
                factorized: c.factorized,
                overparam_n: c.overparam_n,
                activation: c.activation,
            },
            &mut init,
        )?;
        let cpe_stages = c.cpe_stages();
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            let dim = c.channels[i];
            let downsample = if i == 0 {
                None
            } else {
                Some(Block::init(
                    &BlockSpec::PatchEmbed {
                        in_channels: c.channels[i - 1],
                        out_channels: dim,
                        kernel: c.patch_embed_kernel(),
                        factorized: c.factorized,
                        overparam_n: c.overparam_n,
                        activation: c.activation,
                    },
                    &mut init,
                )?)
            };
            let cpe = if cpe_stages.contains(&i) {
                Some(Block::init(
                    &BlockSpec::Cpe {
                        channels: dim,
                        kernel: c.cpe_kernel,
                    },
                    &mut init,
                )?)
            } else {
                None
            };
            let mut blocks = Vec::with_capacity(c.depths[i]);
            for _ in 0..c.depths[i] {
                let mixer = match c.mixers[i] {
                    MixerKind::RepMixer => BlockSpec::RepMixer {
                        channels: dim,
                        kernel: c.mixer_kernel,
                        norm: c.norm,
                        layer_scale: c.layer_scale,
                    },
                    MixerKind::Attention => BlockSpec::Attention {
                        channels: dim,
                        head_dim: c.head_dim,
                        norm: c.norm,
                    },
                    MixerKind::Pooling => BlockSpec::PoolingMixer { kernel: c.pool_kernel },
                };
                let ffn = BlockSpec::ConvFfn {
                    channels: dim,
                    expansion: c.expansion,
                    dw_kernel: c.ffn_dw_kernel(),
                    norm: c.norm,
                    activation: c.activation,
                };
                blocks.push(MetaBlock {
                    mixer: Block::init(&mixer, &mut init)?,
                    ffn: Block::init(&ffn, &mut init)?,
                });
            }
            stages.push(Stage { downsample, cpe, blocks });
        }
        let head = init.conv(ConvParams::linear(
            vec![0.0; c.num_classes * c.channels[3]],
            vec![0.0; c.num_classes],
            c.num_classes,
            c.channels[3],
        )?);
        Ok(Model {
            config: config.clone(),
            mode: Mode::Train,
            stem,
            stages,
            head,
        })
    }

    /// Every block with its path-like name, in execution order.
    pub fn blocks(&self) -> Vec<(String, &Block)> {
        let mut out = vec![("stem".to_string(), &self.stem)];
        for (i, s) in self.stages.iter().enumerate() {
            if let Some(d) = &s.downsample {
                out.push((format!("stages.{i}.downsample"), d));
            }
            if let Some(p) = &s.cpe {
                out.push((format!("stages.{i}.cpe"), p));
            }
            for (j, b) in s.blocks.iter().enumerate() {
                out.push((format!("stages.{i}.blocks.{j}.mixer"), &b.mixer));
                out.push((format!("stages.{i}.blocks.{j}.ffn"), &b.ffn));
            }
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut Block)> {
        let mut out = vec![("stem".to_string(), &mut self.stem)];
        for (i, s) in self.stages.iter_mut().enumerate() {
            if let Some(d) = &mut s.downsample {
                out.push((format!("stages.{i}.downsample"), d));
            }
            if let Some(p) = &mut s.cpe {
                out.push((format!("stages.{i}.cpe"), p));
            }
            for (j, b) in s.blocks.iter_mut().enumerate() {
                out.push((format!("stages.{i}.blocks.{j}.mixer"), &mut b.mixer));
                out.push((format!("stages.{i}.blocks.{j}.ffn"), &mut b.ffn));
            }
        }
        out
    }

    /// Visits every parameter tensor in a stable order.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        for (name, b) in self.blocks() {
            b.visit_params(&name, f);
        }
        crate::blocks::visit_conv("head", &self.head, f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f32>)) {
        for (name, b) in self.blocks_mut() {
            b.visit_params_mut(&name, f);
        }
        crate::blocks::visit_conv_mut("head", &mut self.head, f);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, _, v| n += v.len());
        n
    }

    /// Checks input geometry before any compute.
    pub fn check_input(&self, dims: [usize; 4]) -> Result<()> {
        let [n, c, h, w] = dims;
        let s = OUTPUT_STRIDE;
        if n == 0 || c != self.config.in_channels || h < s || w < s || h % s != 0 || w % s != 0 {
            return Err(Error::shape(
                "model_forward",
                format!("N x {} x H x W with H, W >= {s} and divisible by {s}", self.config.in_channels),
                format!(
                    "{dims:?}; pad or resize to {} x {}",
                    h.max(s).div_ceil(s) * s,
                    w.max(s).div_ceil(s) * s
                ),
            ));
        }
        Ok(())
    }

    /// Features after the last stage (N, C4, H/32, W/32).
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.dims())?;
        let mut y = self.stem.forward(x)?;
        for s in &self.stages {
            if let Some(d) = &s.downsample {
                y = d.forward(&y)?;
            }
            if let Some(p) = &s.cpe {
                y = p.forward(&y)?;
            }
            for b in &s.blocks {
                y = b.mixer.forward(&y)?;
                y = b.ffn.forward(&y)?;
            }
        }
        Ok(y)
    }

    /// Logits as tokens of shape (N, 1, num_classes).
    pub fn forward(&self, x: &Tensor) -> Result<Tokens> {
        let feats = self.features(x)?;
        linear(&global_avg_pool(&feats), &self.head)
    }

    /// Returns the fused model together with a notice per block.
    pub fn reparameterize_with_notices(&self) -> Result<(Model, Vec<(String, ReparamNotice)>)> {
        let mut fused = self.clone();
        let mut notices = Vec::new();
        for (name, b) in fused.blocks_mut() {
            let (f, n) = b.reparameterize()?;
            *b = f;
            notices.push((name, n));
        }
        fused.mode = Mode::Inference;
        Ok((fused, notices))
    }

    /// Fuses every block; a fused model comes back unchanged.
    pub fn reparameterize(&self) -> Result<Model> {
        Ok(self.reparameterize_with_notices()?.0)
    }

    /// Fills BN statistics, affine terms, biases and layer scales with seeded
    /// non-trivial values so that fusion is exercised on every term.
    pub fn randomize_statistics(&mut self, seed: u64) {
        let mut init = Initializer::new(seed);
        self.visit_params_mut(&mut |name, _, v| {
            init.randomize_named(name, v);
        });
    }

    /// True if any batch norm survives anywhere in the structure.
    pub fn has_batch_norm(&self) -> bool {
        self.blocks().iter().any(|(_, b)| b.has_batch_norm())
    }

    /// True if every block that has two structures is in `self.mode`. Pooling
    /// mixers have a single structure and are skipped.
    pub fn is_mode_uniform(&self) -> bool {
        self.blocks()
            .iter()
            .filter(|(_, b)| b.kind() != BlockKind::PoolingMixer)
            .all(|(_, b)| b.mode() == self.mode)
    }

    /// Output shape of every stage for an input of `hw`.
    pub fn stage_shapes(&self, hw: (usize, usize)) -> Result<Vec<FeatureShape>> {
        let mut rows = Vec::new();
        let mut shape = FeatureShape::new(self.config.in_channels, hw.0, hw.1);
        shape = self.stem.cost("stem", shape, &mut rows)?;
        let mut out = Vec::with_capacity(4);
        for s in &self.stages {
            if let Some(d) = &s.downsample {
                shape = d.cost("", shape, &mut rows)?;
            }
            out.push(shape);
        }
        Ok(out)
    }
}

/// Builds a preset by name or a custom config.
pub fn build_variant(name_or_config: impl Into<VariantSource>, seed: u64) -> Result<Model> {
    match name_or_config.into() {
        VariantSource::Preset(name) => Model::build(&VariantConfig::preset(&name)?, seed),
        VariantSource::Config(cfg) => Model::build(&cfg, seed),
    }
}

pub enum VariantSource {
    Preset(String),
    Config(VariantConfig),
}

impl From<&str> for VariantSource {
    fn from(s: &str) -> Self {
        VariantSource::Preset(s.to_string())
    }
}

impl From<String> for VariantSource {
    fn from(s: String) -> Self {
        VariantSource::Preset(s)
    }
}

impl From<VariantConfig> for VariantSource {
    fn from(c: VariantConfig) -> Self {
        VariantSource::Config(c)
    }
}

impl From<&VariantConfig> for VariantSource {
    fn from(c: &VariantConfig) -> Self {
        VariantSource::Config(c.clone())
    }
}
