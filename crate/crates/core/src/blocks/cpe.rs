use super::{check_channels, conv_cost, join, visit_conv, visit_conv_mut, FeatureShape, Mode, ReparamNotice};
use crate::analysis::CostRow;
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::ops::conv2d;
use crate::params::ConvParams;
use crate::reparam::fuse_cpe;
use crate::tensor::Tensor;

/// Conditional positional encoding `x + dwconv(x)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Cpe {
    Train { dw: ConvParams },
    Fused { conv: ConvParams },
}

impl Cpe {
    pub fn init(channels: usize, kernel: usize, init: &mut Initializer) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::config(format!("cpe kernel must be odd, got {kernel}")));
        }
        Ok(Cpe::Train {
            dw: init.conv(ConvParams::zeros(channels, channels, kernel, 1, channels)?),
        })
    }

    fn conv(&self) -> &ConvParams {
        match self {
            Cpe::Train { dw } => dw,
            Cpe::Fused { conv } => conv,
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Cpe::Train { .. } => Mode::Train,
            Cpe::Fused { .. } => Mode::Inference,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_channels("cpe", self.conv().in_channels, x)?;
        match self {
            Cpe::Train { dw } => {
                let mut y = conv2d(x, dw)?;
                y.add_assign(x)?;
                Ok(y)
            }
            Cpe::Fused { conv } => conv2d(x, conv),
        }
    }

    pub fn reparameterize(&self) -> Result<(Self, ReparamNotice)> {
        match self {
            Cpe::Fused { .. } => Ok((self.clone(), ReparamNotice::AlreadyInference)),
            Cpe::Train { dw } => Ok((Cpe::Fused { conv: fuse_cpe(dw)?.conv }, ReparamNotice::Fused)),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Cpe::Train { .. } => "dw",
            Cpe::Fused { .. } => "conv",
        }
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        visit_conv(&join(prefix, self.name()), self.conv(), f);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f32>)) {
        let name = join(prefix, self.name());
        match self {
            Cpe::Train { dw } => visit_conv_mut(&name, dw, f),
            Cpe::Fused { conv } => visit_conv_mut(&name, conv, f),
        }
    }

    pub fn cost(&self, prefix: &str, input: FeatureShape, rows: &mut Vec<CostRow>) -> Result<FeatureShape> {
        conv_cost(join(prefix, self.name()), "dwconv", self.conv(), input, rows)
    }
}
