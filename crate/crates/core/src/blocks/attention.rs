use super::{check_channels, join, norm_cost, visit_conv, visit_conv_mut, visit_norm, visit_norm_mut, FeatureShape, Mode, ReparamNotice};
use crate::analysis::CostRow;
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::ops::{apply_norm, check_linear, mhsa};
use crate::params::{ConvParams, Norm, NormKind};
use crate::reparam::fold_bn_pre;
use crate::tensor::{Tensor, Tokens};

/// Self-attention token mixer with its skip: `x + mhsa(norm(x))`.
///
/// The norm is applied per channel before the feature map is flattened to tokens.
/// A batch norm here folds into the qkv projection at inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub norm: Option<Norm>,
    pub qkv: ConvParams,
    pub proj: ConvParams,
    pub heads: usize,
}

impl Attention {
    pub fn init(channels: usize, head_dim: usize, norm: NormKind, init: &mut Initializer) -> Result<Self> {
        if head_dim == 0 || channels % head_dim != 0 {
            return Err(Error::config(format!(
                "attention dim {channels} not divisible by head_dim {head_dim}"
            )));
        }
        let attn = Self {
            norm: Some(Norm::identity(norm, channels)),
            qkv: init.conv(ConvParams::zeros(3 * channels, channels, 1, 1, 1)?),
            proj: init.conv(ConvParams::zeros(channels, channels, 1, 1, 1)?),
            heads: channels / head_dim,
        };
        check_linear(&attn.qkv)?;
        Ok(attn)
    }

    pub fn channels(&self) -> usize {
        self.proj.out_channels
    }

    pub fn mode(&self) -> Mode {
        match self.norm {
            Some(Norm::Batch(_)) => Mode::Train,
            _ => Mode::Inference,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_channels("attention", self.channels(), x)?;
        let normed = match &self.norm {
            Some(norm) => apply_norm(x, norm)?,
            None => x.clone(),
        };
        let tokens = Tokens::from_nchw(&normed);
        let mixed = mhsa(&tokens, &self.qkv, &self.proj, self.heads)?;
        let mut y = mixed.to_nchw(x.height(), x.width())?;
        y.add_assign(x)?;
        Ok(y)
    }

    pub fn reparameterize(&self) -> Result<(Self, ReparamNotice)> {
        match &self.norm {
            None => Ok((self.clone(), ReparamNotice::AlreadyInference)),
            Some(Norm::Layer(_)) => Ok((
                self.clone(),
                ReparamNotice::PartiallyFused("attention layer norm cannot be folded".into()),
            )),
            Some(Norm::Batch(bn)) => {
                let mut out = self.clone();
                out.qkv = fold_bn_pre(bn, &self.qkv)?;
                out.norm = None;
                Ok((out, ReparamNotice::Fused))
            }
        }
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        if let Some(norm) = &self.norm {
            visit_norm(&join(prefix, "norm"), norm, f);
        }
        visit_conv(&join(prefix, "qkv"), &self.qkv, f);
        visit_conv(&join(prefix, "proj"), &self.proj, f);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f32>)) {
        if let Some(norm) = &mut self.norm {
            visit_norm_mut(&join(prefix, "norm"), norm, f);
        }
        visit_conv_mut(&join(prefix, "qkv"), &mut self.qkv, f);
        visit_conv_mut(&join(prefix, "proj"), &mut self.proj, f);
    }

    /// Linear layers cost `L * Din * Dout`; the two attention matmuls cost
    /// `2 * heads * L^2 * head_dim`. Softmax and scaling are not counted.
    pub fn cost(&self, prefix: &str, input: FeatureShape, rows: &mut Vec<CostRow>) -> Result<FeatureShape> {
        let l = (input.height * input.width) as u64;
        let d = self.channels() as u64;
        if let Some(norm) = &self.norm {
            norm_cost(join(prefix, "norm"), norm, rows);
        }
        rows.push(CostRow::new(join(prefix, "qkv"), "linear", self.qkv.param_count() as u64, l * d * 3 * d));
        let head_dim = d / self.heads as u64;
        rows.push(CostRow::new(
            join(prefix, "matmul"),
            "attention_matmul",
            0,
            2 * self.heads as u64 * l * l * head_dim,
        ));
        rows.push(CostRow::new(join(prefix, "proj"), "linear", self.proj.param_count() as u64, l * d * d));
        Ok(input)
    }
}
