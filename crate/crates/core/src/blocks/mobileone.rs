use super::{conv_cost, join, visit_bn, visit_bn_mut, visit_conv, visit_conv_mut, FeatureShape, Mode, ReparamNotice};
use crate::analysis::CostRow;
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::ops::{activation_in_place, batchnorm_eval, conv2d, Activation};
use crate::params::{BatchNormParams, ConvParams, NORM_EPS};
use crate::reparam::{fuse_mobileone, MobileOneBranches};
use crate::tensor::Tensor;

/// Geometry and branch layout of an overparameterized convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct MobileOneSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
    /// Number of parallel kxk conv+BN branches. 0 disables overparameterization:
    /// a single conv+BN branch with no scale or identity branch.
    pub overparam_n: usize,
    pub activation: Option<Activation>,
}

/// Convolution that is a sum of linear branches during training and one conv at inference.
#[derive(Clone, Debug, PartialEq)]
pub struct MobileOne {
    pub activation: Option<Activation>,
    pub form: MobileOneForm,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MobileOneForm {
    Train(MobileOneBranches),
    Fused(ConvParams),
}

impl MobileOne {
    pub fn init(spec: &MobileOneSpec, init: &mut Initializer) -> Result<Self> {
        let MobileOneSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            groups,
            overparam_n,
            activation,
        } = *spec;
        if kernel % 2 == 0 {
            return Err(Error::config(format!("mobileone kernel must be odd, got {kernel}")));
        }
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::config(format!(
                "mobileone channels {in_channels}->{out_channels} not divisible by {groups} groups"
            )));
        }
        let conv_bn = |init: &mut Initializer, k: usize| -> Result<(ConvParams, BatchNormParams)> {
            Ok((
                init.conv(ConvParams::zeros(out_channels, in_channels, k, stride, groups)?),
                BatchNormParams::identity(out_channels, NORM_EPS),
            ))
        };
        let branches = if overparam_n == 0 {
            MobileOneBranches {
                kxk: vec![conv_bn(init, kernel)?],
                scale: None,
                identity: None,
            }
        } else {
            let kxk = (0..overparam_n)
                .map(|_| conv_bn(init, kernel))
                .collect::<Result<Vec<_>>>()?;
            let scale = if kernel > 1 { Some(conv_bn(init, 1)?) } else { None };
            let identity = (in_channels == out_channels && stride == 1)
                .then(|| BatchNormParams::identity(out_channels, NORM_EPS));
            MobileOneBranches { kxk, scale, identity }
        };
        Ok(Self {
            activation,
            form: MobileOneForm::Train(branches),
        })
    }

    /// Reference branch: the first kxk conv or the fused conv.
    pub fn geometry(&self) -> &ConvParams {
        match &self.form {
            MobileOneForm::Train(b) => &b.kxk[0].0,
            MobileOneForm::Fused(c) => c,
        }
    }

    pub fn mode(&self) -> Mode {
        match self.form {
            MobileOneForm::Train(_) => Mode::Train,
            MobileOneForm::Fused(_) => Mode::Inference,
        }
    }

    /// Sum of branches before the activation.
    pub fn linear_forward(&self, x: &Tensor) -> Result<Tensor> {
        match &self.form {
            MobileOneForm::Fused(conv) => conv2d(x, conv),
            MobileOneForm::Train(b) => {
                let mut acc: Option<Tensor> = None;
                let mut push = |t: Tensor| -> Result<()> {
                    match acc.as_mut() {
                        Some(a) => a.add_assign(&t),
                        None => {
                            acc = Some(t);
                            Ok(())
                        }
                    }
                };
                for (conv, bn) in &b.kxk {
                    push(batchnorm_eval(&conv2d(x, conv)?, bn)?)?;
                }
                if let Some((conv, bn)) = &b.scale {
                    push(batchnorm_eval(&conv2d(x, conv)?, bn)?)?;
                }
                if let Some(bn) = &b.identity {
                    push(batchnorm_eval(x, bn)?)?;
                }
                Ok(acc.expect("at least one branch"))
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.linear_forward(x)?;
        if let Some(act) = self.activation {
            activation_in_place(&mut y, act);
        }
        Ok(y)
    }

    pub fn reparameterize(&self) -> Result<(Self, ReparamNotice)> {
        match &self.form {
            MobileOneForm::Fused(_) => Ok((self.clone(), ReparamNotice::AlreadyInference)),
            MobileOneForm::Train(b) => Ok((
                Self {
                    activation: self.activation,
                    form: MobileOneForm::Fused(fuse_mobileone(b)?.conv),
                },
                ReparamNotice::Fused,
            )),
        }
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        match &self.form {
            MobileOneForm::Fused(conv) => visit_conv(&join(prefix, "conv"), conv, f),
            MobileOneForm::Train(b) => {
                for (i, (conv, bn)) in b.kxk.iter().enumerate() {
                    visit_conv(&join(prefix, &format!("kxk{i}.conv")), conv, f);
                    visit_bn(&join(prefix, &format!("kxk{i}.bn")), bn, f);
                }
                if let Some((conv, bn)) = &b.scale {
                    visit_conv(&join(prefix, "scale.conv"), conv, f);
                    visit_bn(&join(prefix, "scale.bn"), bn, f);
                }
                if let Some(bn) = &b.identity {
                    visit_bn(&join(prefix, "identity"), bn, f);
                }
            }
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f32>)) {
        match &mut self.form {
            MobileOneForm::Fused(conv) => visit_conv_mut(&join(prefix, "conv"), conv, f),
            MobileOneForm::Train(b) => {
                for (i, (conv, bn)) in b.kxk.iter_mut().enumerate() {
                    visit_conv_mut(&join(prefix, &format!("kxk{i}.conv")), conv, f);
                    visit_bn_mut(&join(prefix, &format!("kxk{i}.bn")), bn, f);
                }
                if let Some((conv, bn)) = &mut b.scale {
                    visit_conv_mut(&join(prefix, "scale.conv"), conv, f);
                    visit_bn_mut(&join(prefix, "scale.bn"), bn, f);
                }
                if let Some(bn) = &mut b.identity {
                    visit_bn_mut(&join(prefix, "identity"), bn, f);
                }
            }
        }
    }

    pub fn cost(&self, prefix: &str, input: FeatureShape, rows: &mut Vec<CostRow>) -> Result<FeatureShape> {
        match &self.form {
            MobileOneForm::Fused(conv) => conv_cost(join(prefix, "conv"), "conv", conv, input, rows),
            MobileOneForm::Train(b) => {
                let mut out = None;
                for (i, (conv, bn)) in b.kxk.iter().enumerate() {
                    out = Some(conv_cost(join(prefix, &format!("kxk{i}.conv")), "conv", conv, input, rows)?);
                    rows.push(CostRow::new(
                        join(prefix, &format!("kxk{i}.bn")),
                        "batch_norm",
                        bn.param_count() as u64,
                        0,
                    ));
                }
                if let Some((conv, bn)) = &b.scale {
                    conv_cost(join(prefix, "scale.conv"), "conv", conv, input, rows)?;
                    rows.push(CostRow::new(join(prefix, "scale.bn"), "batch_norm", bn.param_count() as u64, 0));
                }
                if let Some(bn) = &b.identity {
                    rows.push(CostRow::new(join(prefix, "identity"), "batch_norm", bn.param_count() as u64, 0));
                }
                Ok(out.expect("at least one branch"))
            }
        }
    }
}
