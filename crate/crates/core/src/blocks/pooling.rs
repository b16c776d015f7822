use super::{FeatureShape, Mode};
use crate::analysis::CostRow;
use crate::error::{Error, Result};
use crate::ops::pooling_mixer;
use crate::tensor::Tensor;

/// MetaFormer pooling token mixer with its skip: `x + (avgpool(x) - x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingMixer {
    pub kernel: usize,
}

impl PoolingMixer {
    pub fn new(kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::config(format!("pooling kernel must be odd, got {kernel}")));
        }
        Ok(Self { kernel })
    }

    pub fn mode(&self) -> Mode {
        Mode::Inference
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = pooling_mixer(x, self.kernel)?;
        y.add_assign(x)?;
        Ok(y)
    }

    pub fn visit_params(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &[usize], &[f32])) {}

    pub fn visit_params_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &[usize], &mut Vec<f32>)) {}

    pub fn cost(&self, prefix: &str, input: FeatureShape, rows: &mut Vec<CostRow>) -> Result<FeatureShape> {
        rows.push(CostRow::new(prefix.to_string(), "avg_pool", 0, 0));
        Ok(input)
    }
}
