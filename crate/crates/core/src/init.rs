//! Seeded parameter initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::params::{BatchNormParams, ConvParams};
use crate::tensor::Tensor;

/// Standard deviation of the truncated-normal weight init.
pub const WEIGHT_STD: f32 = 0.02;

/// Deterministic source of initial values.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Normal(0, std) resampled until it lands within two standard deviations.
    pub fn trunc_normal(&mut self, len: usize, std: f32) -> Vec<f32> {
        let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
        (0..len)
            .map(|_| loop {
                let z = normal.sample(&mut self.rng);
                if z.abs() <= 2.0 {
                    break z * std;
                }
            })
            .collect()
    }

    pub fn uniform(&mut self, len: usize, lo: f32, hi: f32) -> Vec<f32> {
        (0..len).map(|_| self.rng.random_range(lo..hi)).collect()
    }

    /// Fills conv weights with the truncated normal; bias stays zero.
    pub fn conv(&mut self, mut conv: ConvParams) -> ConvParams {
        conv.weight = self.trunc_normal(conv.weight.len(), WEIGHT_STD);
        conv
    }

    /// Overwrites a named non-weight tensor (norm affine terms and statistics,
    /// biases, layer scales) with seeded, well-conditioned values; weights are
    /// left alone. Returns whether `name` was touched.
    pub fn randomize_named(&mut self, name: &str, values: &mut Vec<f32>) -> bool {
        let leaf = name.rsplit('.').next().unwrap_or(name);
        let (lo, hi) = match leaf {
            "gamma" | "ln_gamma" => (0.5, 1.5),
            "beta" | "ln_beta" | "running_mean" => (-0.2, 0.2),
            "running_var" => (0.5, 2.0),
            "bias" => (-0.1, 0.1),
            "layer_scale" => (0.5, 1.5),
            _ => return false,
        };
        *values = self.uniform(values.len(), lo, hi);
        true
    }

    /// Random, well-conditioned running statistics for equivalence testing.
    pub fn batch_norm_stats(&mut self, bn: &mut BatchNormParams) {
        let c = bn.channels();
        bn.gamma = self.uniform(c, 0.5, 1.5);
        bn.beta = self.uniform(c, -0.2, 0.2);
        bn.running_mean = self.uniform(c, -0.2, 0.2);
        bn.running_var = self.uniform(c, 0.5, 2.0);
    }
}

/// Standard-normal tensor, reproducible from `seed`.
pub fn random_tensor(dims: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
    Tensor::from_fn(dims, |_| normal.sample(&mut rng))
}
