use super::{
    check_channels, conv_cost, join, norm_cost, visit_conv, visit_conv_mut, visit_norm, visit_norm_mut, FeatureShape,
    Mode, ReparamNotice,
};
use crate::analysis::CostRow;
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::ops::{activation_in_place, apply_norm, conv2d, Activation};
use crate::params::{ConvParams, Norm, NormKind};
use crate::reparam::{fold_bn_post, fold_bn_pre};
use crate::tensor::Tensor;

/// Convolutional FFN: `x + pw2(act(pw1(norm(dw(x)))))`.
///
/// Without the depthwise stage the norm acts as a pre-norm on `x`. The skip is
/// permanent; reparameterization only folds the norm into its neighbouring conv.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFfn {
    pub dw: Option<ConvParams>,
    pub norm: Option<Norm>,
    pub pw1: ConvParams,
    pub pw2: ConvParams,
    pub activation: Activation,
}

impl ConvFfn {
    pub fn init(
        channels: usize,
        expansion: usize,
        dw_kernel: Option<usize>,
        norm: NormKind,
        activation: Activation,
        init: &mut Initializer,
    ) -> Result<Self> {
        if expansion == 0 {
            return Err(Error::config("ffn expansion must be positive"));
        }
        let hidden = channels * expansion;
        let dw = match dw_kernel {
            Some(k) if k % 2 == 0 => return Err(Error::config(format!("ffn dw kernel must be odd, got {k}"))),
            Some(k) => Some(init.conv(ConvParams::zeros(channels, channels, k, 1, channels)?)),
            None => None,
        };
        Ok(Self {
            dw,
            norm: Some(Norm::identity(norm, channels)),
            pw1: init.conv(ConvParams::zeros(hidden, channels, 1, 1, 1)?),
            pw2: init.conv(ConvParams::zeros(channels, hidden, 1, 1, 1)?),
            activation,
        })
    }

    pub fn channels(&self) -> usize {
        self.pw2.out_channels
    }

    pub fn hidden(&self) -> usize {
        self.pw1.out_channels
    }

    pub fn mode(&self) -> Mode {
        match self.norm {
            Some(Norm::Batch(_)) => Mode::Train,
            _ => Mode::Inference,
        }
    }

    /// The residual branch alone.
    pub fn branch(&self, x: &Tensor) -> Result<Tensor> {
        check_channels("conv_ffn", self.channels(), x)?;
        let mut h = match &self.dw {
            Some(dw) => conv2d(x, dw)?,
            None => x.clone(),
        };
        if let Some(norm) = &self.norm {
            h = apply_norm(&h, norm)?;
        }
        let mut h = conv2d(&h, &self.pw1)?;
        activation_in_place(&mut h, self.activation);
        conv2d(&h, &self.pw2)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.branch(x)?;
        y.add_assign(x)?;
        Ok(y)
    }

    pub fn reparameterize(&self) -> Result<(Self, ReparamNotice)> {
        match &self.norm {
            None => Ok((self.clone(), ReparamNotice::AlreadyInference)),
            Some(Norm::Layer(_)) => Ok((
                self.clone(),
                ReparamNotice::PartiallyFused("ffn layer norm cannot be folded".into()),
            )),
            Some(Norm::Batch(bn)) => {
                let mut out = self.clone();
                out.norm = None;
                match &self.dw {
                    Some(dw) => out.dw = Some(fold_bn_post(dw, bn)?),
                    None => out.pw1 = fold_bn_pre(bn, &self.pw1)?,
                }
                Ok((out, ReparamNotice::Fused))
            }
        }
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        if let Some(dw) = &self.dw {
            visit_conv(&join(prefix, "dw"), dw, f);
        }
        if let Some(norm) = &self.norm {
            visit_norm(&join(prefix, "norm"), norm, f);
        }
        visit_conv(&join(prefix, "pw1"), &self.pw1, f);
        visit_conv(&join(prefix, "pw2"), &self.pw2, f);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f32>)) {
        if let Some(dw) = &mut self.dw {
            visit_conv_mut(&join(prefix, "dw"), dw, f);
        }
        if let Some(norm) = &mut self.norm {
            visit_norm_mut(&join(prefix, "norm"), norm, f);
        }
        visit_conv_mut(&join(prefix, "pw1"), &mut self.pw1, f);
        visit_conv_mut(&join(prefix, "pw2"), &mut self.pw2, f);
    }

    pub fn cost(&self, prefix: &str, input: FeatureShape, rows: &mut Vec<CostRow>) -> Result<FeatureShape> {
        let mut shape = input;
        if let Some(dw) = &self.dw {
            shape = conv_cost(join(prefix, "dw"), "dwconv", dw, shape, rows)?;
        }
        if let Some(norm) = &self.norm {
            norm_cost(join(prefix, "norm"), norm, rows);
        }
        let hidden = conv_cost(join(prefix, "pw1"), "conv", &self.pw1, shape, rows)?;
        conv_cost(join(prefix, "pw2"), "conv", &self.pw2, hidden, rows)
    }
}
