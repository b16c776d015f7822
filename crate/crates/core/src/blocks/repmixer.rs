use super::{
    check_channels, conv_cost, join, norm_cost, visit_conv, visit_conv_mut, visit_norm, visit_norm_mut, FeatureShape,
    Mode, ReparamNotice,
};
use crate::analysis::CostRow;
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::ops::{apply_norm, conv2d};
use crate::params::{ConvParams, Norm, NormKind};
use crate::reparam::fuse_repmixer;
use crate::tensor::Tensor;

/// Token mixer `x + ls * dwconv(norm(x))`, fused to a single depthwise conv.
#[derive(Clone, Debug, PartialEq)]
pub enum RepMixer {
    Train {
        dw: ConvParams,
        norm: Norm,
        layer_scale: Option<Vec<f32>>,
    },
    Fused {
        conv: ConvParams,
    },
}

impl RepMixer {
    pub fn init(
        channels: usize,
        kernel: usize,
        norm: NormKind,
        layer_scale: Option<f32>,
        init: &mut Initializer,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::config(format!("repmixer kernel must be odd, got {kernel}")));
        }
        Ok(RepMixer::Train {
            dw: init.conv(ConvParams::zeros(channels, channels, kernel, 1, channels)?),
            norm: Norm::identity(norm, channels),
            layer_scale: layer_scale.map(|v| vec![v; channels]),
        })
    }

    pub fn channels(&self) -> usize {
        match self {
            RepMixer::Train { dw, .. } => dw.out_channels,
            RepMixer::Fused { conv } => conv.out_channels,
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            RepMixer::Train { .. } => Mode::Train,
            RepMixer::Fused { .. } => Mode::Inference,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_channels("repmixer", self.channels(), x)?;
        match self {
            RepMixer::Fused { conv } => conv2d(x, conv),
            RepMixer::Train { dw, norm, layer_scale } => {
                // pad, normalize, then convolve unpadded
                let padded = x.zero_pad(dw.padding.0, dw.padding.1);
                let mut valid = dw.clone();
                valid.padding = (0, 0);
                let mut y = conv2d(&apply_norm(&padded, norm)?, &valid)?;
                if let Some(ls) = layer_scale {
                    let plane = y.plane_len();
                    let c = y.channels();
                    for (idx, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
                        let s = ls[idx % c];
                        chunk.iter_mut().for_each(|v| *v *= s);
                    }
                }
                y.add_assign(x)?;
                Ok(y)
            }
        }
    }

    pub fn reparameterize(&self) -> Result<(Self, ReparamNotice)> {
        match self {
            RepMixer::Fused { .. } => Ok((self.clone(), ReparamNotice::AlreadyInference)),
            RepMixer::Train {
                norm: Norm::Layer(_), ..
            } => Ok((
                self.clone(),
                ReparamNotice::PartiallyFused("repmixer layer norm cannot be folded".into()),
            )),
            RepMixer::Train {
                dw,
                norm: Norm::Batch(bn),
                layer_scale,
            } => {
                let fused = fuse_repmixer(dw, bn, layer_scale.as_deref())?;
                Ok((RepMixer::Fused { conv: fused.conv }, ReparamNotice::Fused))
            }
        }
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        match self {
            RepMixer::Fused { conv } => visit_conv(&join(prefix, "conv"), conv, f),
            RepMixer::Train { dw, norm, layer_scale } => {
                visit_norm(&join(prefix, "norm"), norm, f);
                visit_conv(&join(prefix, "dw"), dw, f);
                if let Some(ls) = layer_scale {
                    f(&join(prefix, "layer_scale"), &[ls.len()], ls);
                }
            }
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f32>)) {
        match self {
            RepMixer::Fused { conv } => visit_conv_mut(&join(prefix, "conv"), conv, f),
            RepMixer::Train { dw, norm, layer_scale } => {
                visit_norm_mut(&join(prefix, "norm"), norm, f);
                visit_conv_mut(&join(prefix, "dw"), dw, f);
                if let Some(ls) = layer_scale {
                    let n = ls.len();
                    f(&join(prefix, "layer_scale"), &[n], ls);
                }
            }
        }
    }

    pub fn cost(&self, prefix: &str, input: FeatureShape, rows: &mut Vec<CostRow>) -> Result<FeatureShape> {
        match self {
            RepMixer::Fused { conv } => conv_cost(join(prefix, "conv"), "dwconv", conv, input, rows),
            RepMixer::Train { dw, norm, layer_scale } => {
                norm_cost(join(prefix, "norm"), norm, rows);
                let out = conv_cost(join(prefix, "dw"), "dwconv", dw, input, rows)?;
                if let Some(ls) = layer_scale {
                    rows.push(CostRow::new(join(prefix, "layer_scale"), "layer_scale", ls.len() as u64, 0));
                }
                Ok(out)
            }
        }
    }
}
