use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`
    #[default]
    Gelu,
    Relu,
    Silu,
}

const SQRT_2_OVER_PI: f32 = 0.797_884_6;
const GELU_CUBIC: f32 = 0.044_715;

impl Activation {
    #[inline]
    pub fn eval(self, x: f32) -> f32 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh()),
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    let mut out = input.clone();
    activation_in_place(&mut out, kind);
    out
}

pub fn activation_in_place(x: &mut Tensor, kind: Activation) {
    x.data_mut().par_chunks_mut(4096).for_each(|chunk| {
        for v in chunk {
            *v = kind.eval(*v);
        }
    });
}
