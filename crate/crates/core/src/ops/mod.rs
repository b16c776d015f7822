//! Deterministic dense kernels the blocks are assembled from.

mod act;
mod attention;
mod conv;
mod linear;
mod norm;
mod pool;

pub use act::{activation, activation_in_place, Activation};
pub use attention::mhsa;
pub use conv::conv2d;
pub use linear::linear;
pub(crate) use linear::check_linear;
pub use norm::{apply_norm, batchnorm_eval, layernorm_channels};
pub use pool::{global_avg_pool, pooling_mixer};
