//! FastViT reference implementation with a structural reparameterization engine.
//!
//! The crate is organised bottom-up: [`tensor`] and [`ops`] provide a small
//! deterministic NCHW kernel set, [`reparam`] the fusion algebra, [`blocks`]
//! the train/inference block pairs, [`zoo`] the assembled variants, and
//! [`analysis`], [`bench`] and [`archive`] the tooling around them.

pub mod analysis;
pub mod archive;
pub mod bench;
pub mod blocks;
pub mod error;
pub mod init;
pub mod ops;
pub mod params;
pub mod reparam;
pub mod tensor;
pub mod threads;
pub mod zoo;

pub use analysis::{cost_report, count_macs, count_params, CostReport, CostRow};
pub use blocks::{Block, BlockKind, BlockSpec, Mode, ReparamNotice};
pub use error::{Error, Result};
pub use params::{BatchNormParams, ConvParams, LayerNormParams, Norm, NormKind};
pub use tensor::{Tensor, Tokens};
pub use zoo::{build_variant, Model, VariantConfig};
