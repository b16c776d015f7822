//! FastViT building blocks in their train-time and inference-time structures.
//!
//! Each block owns its parameters, runs a forward pass in whichever structure it
//! currently holds, and can be rewritten into its fused inference structure with
//! [`Block::reparameterize`].

mod attention;
mod cpe;
mod embed;
mod ffn;
mod mobileone;
mod pooling;
mod repmixer;

pub use attention::Attention;
pub use cpe::Cpe;
pub use embed::{PatchEmbed, Stem};
pub use ffn::ConvFfn;
pub use mobileone::{MobileOne, MobileOneSpec};
pub use pooling::PoolingMixer;
pub use repmixer::RepMixer;

use serde::{Deserialize, Serialize};

use crate::analysis::CostRow;
use crate::error::Result;
use crate::init::Initializer;
use crate::ops::Activation;
use crate::params::{BatchNormParams, ConvParams, Norm, NormKind};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    RepMixer,
    MobileOne,
    ConvFfn,
    PatchEmbed,
    Stem,
    Cpe,
    Attention,
    PoolingMixer,
}

/// Outcome of a reparameterization request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReparamNotice {
    Fused,
    AlreadyInference,
    /// The kind has nothing to fuse (pooling mixer).
    NotReparameterizable,
    /// Some sub-layer could not be folded, e.g. a layer norm.
    PartiallyFused(String),
}

/// Channel count and spatial size of a feature map, batch excluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn of(x: &Tensor) -> Self {
        Self::new(x.channels(), x.height(), x.width())
    }
}

/// Everything needed to initialize one block.
#[derive(Clone, Debug, PartialEq)]
pub enum BlockSpec {
    RepMixer {
        channels: usize,
        kernel: usize,
        norm: NormKind,
        layer_scale: Option<f32>,
    },
    MobileOne(MobileOneSpec),
    ConvFfn {
        channels: usize,
        expansion: usize,
        /// Depthwise kernel before the norm; `None` gives a pre-norm 1x1 FFN.
        dw_kernel: Option<usize>,
        norm: NormKind,
        activation: Activation,
    },
    PatchEmbed {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        factorized: bool,
        overparam_n: usize,
        activation: Activation,
    },
    Stem {
        in_channels: usize,
        out_channels: usize,
        factorized: bool,
        overparam_n: usize,
        activation: Activation,
    },
    Cpe {
        channels: usize,
        kernel: usize,
    },
    Attention {
        channels: usize,
        head_dim: usize,
        norm: NormKind,
    },
    PoolingMixer {
        kernel: usize,
    },
}

impl BlockSpec {
    pub fn kind(&self) -> BlockKind {
        match self {
            BlockSpec::RepMixer { .. } => BlockKind::RepMixer,
            BlockSpec::MobileOne(_) => BlockKind::MobileOne,
            BlockSpec::ConvFfn { .. } => BlockKind::ConvFfn,
            BlockSpec::PatchEmbed { .. } => BlockKind::PatchEmbed,
            BlockSpec::Stem { .. } => BlockKind::Stem,
            BlockSpec::Cpe { .. } => BlockKind::Cpe,
            BlockSpec::Attention { .. } => BlockKind::Attention,
            BlockSpec::PoolingMixer { .. } => BlockKind::PoolingMixer,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    RepMixer(RepMixer),
    MobileOne(MobileOne),
    ConvFfn(ConvFfn),
    PatchEmbed(PatchEmbed),
    Stem(Stem),
    Cpe(Cpe),
    Attention(Attention),
    PoolingMixer(PoolingMixer),
}

/// Seeded initialization of a single block in its train structure.
pub fn block_init(spec: &BlockSpec, seed: u64) -> Result<Block> {
    Block::init(spec, &mut Initializer::new(seed))
}

macro_rules! dispatch {
    ($self:expr, $b:ident => $e:expr) => {
        match $self {
            Block::RepMixer($b) => $e,
            Block::MobileOne($b) => $e,
            Block::ConvFfn($b) => $e,
            Block::PatchEmbed($b) => $e,
            Block::Stem($b) => $e,
            Block::Cpe($b) => $e,
            Block::Attention($b) => $e,
            Block::PoolingMixer($b) => $e,
        }
    };
}

impl Block {
    pub fn init(spec: &BlockSpec, init: &mut Initializer) -> Result<Block> {
        Ok(match *spec {
            BlockSpec::RepMixer {
                channels,
                kernel,
                norm,
                layer_scale,
            } => Block::RepMixer(RepMixer::init(channels, kernel, norm, layer_scale, init)?),
            BlockSpec::MobileOne(ref s) => Block::MobileOne(MobileOne::init(s, init)?),
            BlockSpec::ConvFfn {
                channels,
                expansion,
                dw_kernel,
                norm,
                activation,
            } => Block::ConvFfn(ConvFfn::init(channels, expansion, dw_kernel, norm, activation, init)?),
            BlockSpec::PatchEmbed {
                in_channels,
                out_channels,
                kernel,
                factorized,
                overparam_n,
                activation,
            } => Block::PatchEmbed(PatchEmbed::init(
                in_channels,
                out_channels,
                kernel,
                factorized,
                overparam_n,
                activation,
                init,
            )?),
            BlockSpec::Stem {
                in_channels,
                out_channels,
                factorized,
                overparam_n,
                activation,
            } => Block::Stem(Stem::init(in_channels, out_channels, factorized, overparam_n, activation, init)?),
            BlockSpec::Cpe { channels, kernel } => Block::Cpe(Cpe::init(channels, kernel, init)?),
            BlockSpec::Attention {
                channels,
                head_dim,
                norm,
            } => Block::Attention(Attention::init(channels, head_dim, norm, init)?),
            BlockSpec::PoolingMixer { kernel } => Block::PoolingMixer(PoolingMixer::new(kernel)?),
        })
    }

    pub fn kind(&self) -> BlockKind {
        match self {
            Block::RepMixer(_) => BlockKind::RepMixer,
            Block::MobileOne(_) => BlockKind::MobileOne,
            Block::ConvFfn(_) => BlockKind::ConvFfn,
            Block::PatchEmbed(_) => BlockKind::PatchEmbed,
            Block::Stem(_) => BlockKind::Stem,
            Block::Cpe(_) => BlockKind::Cpe,
            Block::Attention(_) => BlockKind::Attention,
            Block::PoolingMixer(_) => BlockKind::PoolingMixer,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        dispatch!(self, b => b.forward(x))
    }

    pub fn mode(&self) -> Mode {
        dispatch!(self, b => b.mode())
    }

    /// Returns the fused form; never mutates `self`.
    pub fn reparameterize(&self) -> Result<(Block, ReparamNotice)> {
        Ok(match self {
            Block::RepMixer(b) => b.reparameterize()?.map_block(Block::RepMixer),
            Block::MobileOne(b) => b.reparameterize()?.map_block(Block::MobileOne),
            Block::ConvFfn(b) => b.reparameterize()?.map_block(Block::ConvFfn),
            Block::PatchEmbed(b) => b.reparameterize()?.map_block(Block::PatchEmbed),
            Block::Stem(b) => b.reparameterize()?.map_block(Block::Stem),
            Block::Cpe(b) => b.reparameterize()?.map_block(Block::Cpe),
            Block::Attention(b) => b.reparameterize()?.map_block(Block::Attention),
            Block::PoolingMixer(b) => (Block::PoolingMixer(b.clone()), ReparamNotice::NotReparameterizable),
        })
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        dispatch!(self, b => b.visit_params(prefix, f))
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f32>)) {
        dispatch!(self, b => b.visit_params_mut(prefix, f))
    }

    /// Appends one cost row per layer and returns the output shape.
    pub fn cost(&self, prefix: &str, input: FeatureShape, rows: &mut Vec<CostRow>) -> Result<FeatureShape> {
        dispatch!(self, b => b.cost(prefix, input, rows))
    }

    /// Seeded non-trivial norm statistics, biases and layer scales.
    pub fn randomize_statistics(&mut self, seed: u64) {
        let mut init = Initializer::new(seed);
        self.visit_params_mut("", &mut |name, _, v| {
            init.randomize_named(name, v);
        });
    }

    pub fn param_count(&self) -> usize {
        let mut total = 0;
        self.visit_params("", &mut |_, _, v| total += v.len());
        total
    }

    /// True if any batch norm survives in the structure.
    pub fn has_batch_norm(&self) -> bool {
        let mut found = false;
        self.visit_params("", &mut |name, _, _| found |= name.ends_with("running_var"));
        found
    }
}

trait MapBlock<T> {
    fn map_block(self, f: impl FnOnce(T) -> Block) -> (Block, ReparamNotice);
}

impl<T> MapBlock<T> for (T, ReparamNotice) {
    fn map_block(self, f: impl FnOnce(T) -> Block) -> (Block, ReparamNotice) {
        (f(self.0), self.1)
    }
}

/// Combines notices of sub-layers fused together.
pub(crate) fn merge_notices(notices: impl IntoIterator<Item = ReparamNotice>) -> ReparamNotice {
    let mut any_fused = false;
    let mut partial = Vec::new();
    for n in notices {
        match n {
            ReparamNotice::Fused => any_fused = true,
            ReparamNotice::PartiallyFused(r) => partial.push(r),
            ReparamNotice::AlreadyInference | ReparamNotice::NotReparameterizable => {}
        }
    }
    if !partial.is_empty() {
        ReparamNotice::PartiallyFused(partial.join("; "))
    } else if any_fused {
        ReparamNotice::Fused
    } else {
        ReparamNotice::AlreadyInference
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_conv(prefix: &str, conv: &ConvParams, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
    f(&join(prefix, "weight"), &conv.weight_dims(), &conv.weight);
    f(&join(prefix, "bias"), &[conv.out_channels], &conv.bias);
}

pub(crate) fn visit_conv_mut(prefix: &str, conv: &mut ConvParams, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f32>)) {
    let dims = conv.weight_dims();
    f(&join(prefix, "weight"), &dims, &mut conv.weight);
    f(&join(prefix, "bias"), &[conv.out_channels], &mut conv.bias);
}

pub(crate) fn visit_bn(prefix: &str, bn: &BatchNormParams, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
    let c = [bn.channels()];
    f(&join(prefix, "gamma"), &c, &bn.gamma);
    f(&join(prefix, "beta"), &c, &bn.beta);
    f(&join(prefix, "running_mean"), &c, &bn.running_mean);
    f(&join(prefix, "running_var"), &c, &bn.running_var);
}

pub(crate) fn visit_bn_mut(prefix: &str, bn: &mut BatchNormParams, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f32>)) {
    let c = [bn.channels()];
    f(&join(prefix, "gamma"), &c, &mut bn.gamma);
    f(&join(prefix, "beta"), &c, &mut bn.beta);
    f(&join(prefix, "running_mean"), &c, &mut bn.running_mean);
    f(&join(prefix, "running_var"), &c, &mut bn.running_var);
}

pub(crate) fn visit_norm(prefix: &str, norm: &Norm, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
    match norm {
        Norm::Batch(bn) => visit_bn(prefix, bn, f),
        Norm::Layer(ln) => {
            let c = [ln.channels()];
            f(&join(prefix, "ln_gamma"), &c, &ln.gamma);
            f(&join(prefix, "ln_beta"), &c, &ln.beta);
        }
    }
}

pub(crate) fn visit_norm_mut(prefix: &str, norm: &mut Norm, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f32>)) {
    match norm {
        Norm::Batch(bn) => visit_bn_mut(prefix, bn, f),
        Norm::Layer(ln) => {
            let c = [ln.channels()];
            f(&join(prefix, "ln_gamma"), &c, &mut ln.gamma);
            f(&join(prefix, "ln_beta"), &c, &mut ln.beta);
        }
    }
}

/// Cost row of a convolution applied to `input`; returns the output shape.
pub(crate) fn conv_cost(
    name: String,
    kind: &str,
    conv: &ConvParams,
    input: FeatureShape,
    rows: &mut Vec<CostRow>,
) -> Result<FeatureShape> {
    let (oh, ow) = conv.output_hw(input.height, input.width)?;
    let macs = (conv.out_channels * oh * ow * conv.kernel_area() * conv.in_per_group()) as u64;
    rows.push(CostRow::new(name, kind, conv.param_count() as u64, macs));
    Ok(FeatureShape::new(conv.out_channels, oh, ow))
}

pub(crate) fn norm_cost(name: String, norm: &Norm, rows: &mut Vec<CostRow>) {
    let kind = match norm {
        Norm::Batch(_) => "batch_norm",
        Norm::Layer(_) => "layer_norm",
    };
    rows.push(CostRow::new(name, kind, norm.param_count() as u64, 0));
}

pub(crate) fn check_channels(op: &'static str, expected: usize, x: &Tensor) -> Result<()> {
    if x.channels() != expected {
        return Err(crate::error::Error::shape(
            op,
            format!("{expected} input channels"),
            format!("{:?}", x.dims()),
        ));
    }
    Ok(())
}
