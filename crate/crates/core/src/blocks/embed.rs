use super::{join, merge_notices, FeatureShape, MobileOne, MobileOneSpec, Mode, ReparamNotice};
use crate::analysis::CostRow;
use crate::error::Result;
use crate::init::Initializer;
use crate::ops::Activation;
use crate::tensor::Tensor;

/// Runs a chain of MobileOne units.
fn chain_forward(units: &[MobileOne], x: &Tensor) -> Result<Tensor> {
    let mut y = units[0].forward(x)?;
    for u in &units[1..] {
        y = u.forward(&y)?;
    }
    Ok(y)
}

fn chain_reparameterize(units: &[MobileOne]) -> Result<(Vec<MobileOne>, ReparamNotice)> {
    let mut out = Vec::with_capacity(units.len());
    let mut notices = Vec::with_capacity(units.len());
    for u in units {
        let (f, n) = u.reparameterize()?;
        out.push(f);
        notices.push(n);
    }
    Ok((out, merge_notices(notices)))
}

fn chain_mode(units: &[MobileOne]) -> Mode {
    if units.iter().any(|u| u.mode() == Mode::Train) {
        Mode::Train
    } else {
        Mode::Inference
    }
}

fn chain_cost(units: &[MobileOne], prefix: &str, input: FeatureShape, rows: &mut Vec<CostRow>) -> Result<FeatureShape> {
    let mut shape = input;
    for (i, u) in units.iter().enumerate() {
        shape = u.cost(&join(prefix, &i.to_string()), shape, rows)?;
    }
    Ok(shape)
}

/// Convolutional stem, H x W -> H/4 x W/4.
///
/// Factorized: dense 3x3 s2, depthwise 3x3 s2, pointwise 1x1, all MobileOne style.
/// Otherwise a single dense 7x7 s4 convolution (PoolFormer patch stem).
#[derive(Clone, Debug, PartialEq)]
pub struct Stem {
    pub units: Vec<MobileOne>,
}

impl Stem {
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        factorized: bool,
        overparam_n: usize,
        activation: Activation,
        init: &mut Initializer,
    ) -> Result<Self> {
        let specs = if factorized {
            vec![
                MobileOneSpec {
                    in_channels,
                    out_channels,
                    kernel: 3,
                    stride: 2,
                    groups: 1,
                    overparam_n,
                    activation: Some(activation),
                },
                MobileOneSpec {
                    in_channels: out_channels,
                    out_channels,
                    kernel: 3,
                    stride: 2,
                    groups: out_channels,
                    overparam_n,
                    activation: Some(activation),
                },
                MobileOneSpec {
                    in_channels: out_channels,
                    out_channels,
                    kernel: 1,
                    stride: 1,
                    groups: 1,
                    overparam_n,
                    activation: Some(activation),
                },
            ]
        } else {
            vec![MobileOneSpec {
                in_channels,
                out_channels,
                kernel: 7,
                stride: 4,
                groups: 1,
                overparam_n,
                activation: None,
            }]
        };
        Ok(Self {
            units: specs.iter().map(|s| MobileOne::init(s, init)).collect::<Result<_>>()?,
        })
    }

    pub fn mode(&self) -> Mode {
        chain_mode(&self.units)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        chain_forward(&self.units, x)
    }

    pub fn reparameterize(&self) -> Result<(Self, ReparamNotice)> {
        let (units, notice) = chain_reparameterize(&self.units)?;
        Ok((Self { units }, notice))
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        for (i, u) in self.units.iter().enumerate() {
            u.visit_params(&join(prefix, &i.to_string()), f);
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f32>)) {
        for (i, u) in self.units.iter_mut().enumerate() {
            u.visit_params_mut(&join(prefix, &i.to_string()), f);
        }
    }

    pub fn cost(&self, prefix: &str, input: FeatureShape, rows: &mut Vec<CostRow>) -> Result<FeatureShape> {
        chain_cost(&self.units, prefix, input, rows)
    }
}

/// Stride-2 downsampling between stages.
///
/// Factorized: kxk depthwise-style conv (groups = in_channels) s2 followed by a
/// 1x1 pointwise conv, both MobileOne style. Otherwise a dense 3x3 s2 conv.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbed {
    pub units: Vec<MobileOne>,
}

impl PatchEmbed {
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        factorized: bool,
        overparam_n: usize,
        activation: Activation,
        init: &mut Initializer,
    ) -> Result<Self> {
        let specs = if factorized {
            vec![
                MobileOneSpec {
                    in_channels,
                    out_channels,
                    kernel,
                    stride: 2,
                    groups: in_channels,
                    overparam_n,
                    activation: Some(activation),
                },
                MobileOneSpec {
                    in_channels: out_channels,
                    out_channels,
                    kernel: 1,
                    stride: 1,
                    groups: 1,
                    overparam_n,
                    activation: Some(activation),
                },
            ]
        } else {
            vec![MobileOneSpec {
                in_channels,
                out_channels,
                kernel: 3,
                stride: 2,
                groups: 1,
                overparam_n,
                activation: None,
            }]
        };
        Ok(Self {
            units: specs.iter().map(|s| MobileOne::init(s, init)).collect::<Result<_>>()?,
        })
    }

    pub fn mode(&self) -> Mode {
        chain_mode(&self.units)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        chain_forward(&self.units, x)
    }

    pub fn reparameterize(&self) -> Result<(Self, ReparamNotice)> {
        let (units, notice) = chain_reparameterize(&self.units)?;
        Ok((Self { units }, notice))
    }

    pub fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        for (i, u) in self.units.iter().enumerate() {
            u.visit_params(&join(prefix, &i.to_string()), f);
        }
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f32>)) {
        for (i, u) in self.units.iter_mut().enumerate() {
            u.visit_params_mut(&join(prefix, &i.to_string()), f);
        }
    }

    pub fn cost(&self, prefix: &str, input: FeatureShape, rows: &mut Vec<CostRow>) -> Result<FeatureShape> {
        chain_cost(&self.units, prefix, input, rows)
    }
}
