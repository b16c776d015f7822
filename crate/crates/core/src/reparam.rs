//! Fusion calculus: rewrites of branched, normalized structures into one convolution.
//!
//! Conventions shared by every rule:
//! - batch norms are in evaluation mode, `bn(x) = s*x + t` with
//!   `s = gamma / sqrt(var + eps)` and `t = beta - mean*s`;
//! - a batch norm that feeds a padded convolution is applied to the zero-padded
//!   input (pad, normalize, then convolve without padding). That keeps
//!   [`fold_bn_pre`] exact on border pixels too.

use crate::error::{Error, Result};
use crate::params::{BatchNormParams, ConvParams};

/// A convolution produced by fusion, with the list of branches it absorbed.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedConv {
    pub conv: ConvParams,
    pub provenance: Vec<String>,
}

/// `bn(conv(x))` as a single convolution.
pub fn fold_bn_post(conv: &ConvParams, bn: &BatchNormParams) -> Result<ConvParams> {
    conv.validate()?;
    bn.validate()?;
    if bn.channels() != conv.out_channels {
        return Err(Error::shape(
            "fold_bn_post",
            format!("{} batch-norm channels", conv.out_channels),
            format!("{}", bn.channels()),
        ));
    }
    let (scale, _) = bn.affine();
    let mut out = conv.clone();
    for o in 0..conv.out_channels {
        let s = scale[o];
        for w in out.filter_mut(o) {
            *w *= s;
        }
        out.bias[o] = bn.beta[o] + (conv.bias[o] - bn.running_mean[o]) * s;
    }
    Ok(out)
}

/// `conv(bn(x))` as a single convolution (see the module note on padding).
pub fn fold_bn_pre(bn: &BatchNormParams, conv: &ConvParams) -> Result<ConvParams> {
    conv.validate()?;
    bn.validate()?;
    if bn.channels() != conv.in_channels {
        return Err(Error::shape(
            "fold_bn_pre",
            format!("{} batch-norm channels", conv.in_channels),
            format!("{}", bn.channels()),
        ));
    }
    let (scale, shift) = bn.affine();
    let area = conv.kernel_area();
    let cin = conv.in_per_group();
    let mut out = conv.clone();
    for o in 0..conv.out_channels {
        let mut extra = 0.0f32;
        let filter = out.filter_mut(o);
        for local in 0..cin {
            let c = conv.input_channel(o, local);
            let taps = &mut filter[local * area..(local + 1) * area];
            let tap_sum: f32 = taps.iter().sum();
            extra += shift[c] * tap_sum;
            for w in taps.iter_mut() {
                *w *= scale[c];
            }
        }
        out.bias[o] = conv.bias[o] + extra;
    }
    Ok(out)
}

/// Adds `scale[o]` at the centre tap linking output `o` to input `o`, so the result
/// computes `conv(x) + scale*x`. `None` means a unit scale.
pub fn add_identity(conv: &ConvParams, scale: Option<&[f32]>) -> Result<ConvParams> {
    conv.validate()?;
    let (kh, kw) = conv.kernel;
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::config(format!(
            "identity needs an odd kernel with a centre tap, got {kh}x{kw}"
        )));
    }
    if conv.in_channels != conv.out_channels {
        return Err(Error::config(format!(
            "identity channel lies outside the group: {}",
            conv.describe()
        )));
    }
    if conv.stride != (1, 1) || conv.padding != (kh / 2, kw / 2) {
        return Err(Error::config(format!(
            "identity needs stride 1 and centred padding: {}",
            conv.describe()
        )));
    }
    if let Some(s) = scale {
        if s.len() != conv.out_channels {
            return Err(Error::shape(
                "add_identity",
                format!("{} scale entries", conv.out_channels),
                format!("{}", s.len()),
            ));
        }
    }
    let mut out = conv.clone();
    let area = kh * kw;
    let centre = (kh / 2) * kw + kw / 2;
    let cin = conv.in_per_group();
    for o in 0..conv.out_channels {
        // in == out, so input channel o sits in o's own group at this local index
        let local = o % cin;
        let add = scale.map_or(1.0, |s| s[o]);
        out.filter_mut(o)[local * area + centre] += add;
    }
    Ok(out)
}

/// Zero-embeds the kernel centred in a larger one.
pub fn pad_kernel(conv: &ConvParams, target: (usize, usize)) -> Result<ConvParams> {
    conv.validate()?;
    let (kh, kw) = conv.kernel;
    let (th, tw) = target;
    if th < kh || tw < kw {
        return Err(Error::config(format!(
            "cannot pad {kh}x{kw} kernel down to {th}x{tw}"
        )));
    }
    if (th - kh) % 2 != 0 || (tw - kw) % 2 != 0 {
        return Err(Error::config(format!(
            "kernel parity mismatch: {kh}x{kw} -> {th}x{tw}"
        )));
    }
    if target == conv.kernel {
        return Ok(conv.clone());
    }
    let (dh, dw) = ((th - kh) / 2, (tw - kw) / 2);
    let planes = conv.out_channels * conv.in_per_group();
    let mut weight = vec![0.0f32; planes * th * tw];
    for p in 0..planes {
        for i in 0..kh {
            for j in 0..kw {
                weight[p * th * tw + (i + dh) * tw + j + dw] = conv.weight[p * kh * kw + i * kw + j];
            }
        }
    }
    ConvParams::new(
        weight,
        conv.bias.clone(),
        conv.out_channels,
        conv.in_channels,
        target,
        conv.stride,
        (conv.padding.0 + dh, conv.padding.1 + dw),
        conv.groups,
    )
}

/// A batch norm alone, written as a centred-identity convolution.
pub fn bn_branch_to_conv(bn: &BatchNormParams, kernel: (usize, usize), groups: usize) -> Result<ConvParams> {
    bn.validate()?;
    let c = bn.channels();
    let (kh, kw) = kernel;
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::config(format!("identity branch needs an odd kernel, got {kh}x{kw}")));
    }
    if groups == 0 || c % groups != 0 {
        return Err(Error::shape(
            "bn_branch_to_conv",
            format!("channels divisible by {groups} groups"),
            format!("{c} channels"),
        ));
    }
    let (scale, shift) = bn.affine();
    let mut conv = ConvParams::new(
        vec![0.0; c * (c / groups) * kh * kw],
        vec![0.0; c],
        c,
        c,
        kernel,
        (1, 1),
        (kh / 2, kw / 2),
        groups,
    )?;
    conv.bias = shift;
    add_identity(&conv, Some(&scale))
}

/// Elementwise sum of same-geometry convolutions.
pub fn sum_branches(branches: &[ConvParams]) -> Result<ConvParams> {
    let first = branches
        .first()
        .ok_or_else(|| Error::config("sum_branches needs at least one branch"))?;
    first.validate()?;
    let mut out = first.clone();
    for (idx, b) in branches.iter().enumerate().skip(1) {
        b.validate()?;
        if !b.same_geometry(first) {
            return Err(Error::config(format!(
                "branch {idx} has geometry {} but branch 0 has {}",
                b.describe(),
                first.describe()
            )));
        }
        for (acc, w) in out.weight.iter_mut().zip(&b.weight) {
            *acc += *w;
        }
        for (acc, w) in out.bias.iter_mut().zip(&b.bias) {
            *acc += *w;
        }
    }
    Ok(out)
}

/// `x + ls * dw(bn(x))` as one depthwise convolution.
pub fn fuse_repmixer(dw: &ConvParams, bn: &BatchNormParams, layer_scale: Option<&[f32]>) -> Result<FusedConv> {
    if !dw.is_depthwise() {
        return Err(Error::config(format!("repmixer needs a depthwise conv, got {}", dw.describe())));
    }
    let mut conv = fold_bn_pre(bn, dw)?;
    let mut provenance = vec!["dwconv".to_string(), "bn(pre)".to_string()];
    if let Some(ls) = layer_scale {
        if ls.len() != conv.out_channels {
            return Err(Error::shape(
                "fuse_repmixer",
                format!("{} layer-scale entries", conv.out_channels),
                format!("{}", ls.len()),
            ));
        }
        for (o, &s) in ls.iter().enumerate() {
            for w in conv.filter_mut(o) {
                *w *= s;
            }
            conv.bias[o] *= s;
        }
        provenance.push("layer_scale".into());
    }
    let conv = add_identity(&conv, None)?;
    provenance.push("skip".into());
    Ok(FusedConv { conv, provenance })
}

/// Train-time branches of an overparameterized (MobileOne-style) convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct MobileOneBranches {
    /// `n` parallel conv+BN branches with the full kernel.
    pub kxk: Vec<(ConvParams, BatchNormParams)>,
    /// Optional 1x1 conv+BN branch.
    pub scale: Option<(ConvParams, BatchNormParams)>,
    /// Optional BN-only identity branch.
    pub identity: Option<BatchNormParams>,
}

/// Sum of all branches (before the shared activation) as one convolution.
pub fn fuse_mobileone(branches: &MobileOneBranches) -> Result<FusedConv> {
    let (reference, _) = branches
        .kxk
        .first()
        .ok_or_else(|| Error::config("mobileone block needs at least one kxk branch"))?;
    let mut convs = Vec::new();
    let mut provenance = Vec::new();
    for (idx, (conv, bn)) in branches.kxk.iter().enumerate() {
        convs.push(fold_bn_post(conv, bn)?);
        provenance.push(format!("kxk[{idx}]"));
    }
    if let Some((conv, bn)) = &branches.scale {
        if conv.kernel != (1, 1) {
            return Err(Error::config(format!("scale branch must be 1x1, got {}", conv.describe())));
        }
        let folded = fold_bn_post(conv, bn)?;
        convs.push(pad_kernel(&folded, reference.kernel)?);
        provenance.push("scale".into());
    }
    if let Some(bn) = &branches.identity {
        if reference.in_channels != reference.out_channels || reference.stride != (1, 1) {
            return Err(Error::config(format!(
                "identity branch needs in == out and stride 1: {}",
                reference.describe()
            )));
        }
        let mut id = bn_branch_to_conv(bn, reference.kernel, reference.groups)?;
        id.padding = reference.padding;
        convs.push(id);
        provenance.push("identity".into());
    }
    Ok(FusedConv {
        conv: sum_branches(&convs)?,
        provenance,
    })
}

/// `x + dw(x)` as one depthwise convolution.
pub fn fuse_cpe(dw: &ConvParams) -> Result<FusedConv> {
    if !dw.is_depthwise() {
        return Err(Error::config(format!("cpe needs a depthwise conv, got {}", dw.describe())));
    }
    Ok(FusedConv {
        conv: add_identity(dw, None)?,
        provenance: vec!["dwconv".into(), "skip".into()],
    })
}
