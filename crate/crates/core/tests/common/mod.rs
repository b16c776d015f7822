//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use fastvit_core::init::Initializer;
use fastvit_core::zoo::{CpePlacement, LargeKernelSite, MixerKind, VariantConfig};
use fastvit_core::{BatchNormParams, ConvParams, Tensor};

pub fn rand_conv(
    seed: u64,
    out_c: usize,
    in_c: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
    groups: usize,
) -> ConvParams {
    let mut init = Initializer::new(seed);
    let n = out_c * (in_c / groups) * kernel.0 * kernel.1;
    ConvParams::new(
        init.uniform(n, -0.5, 0.5),
        init.uniform(out_c, -0.5, 0.5),
        out_c,
        in_c,
        kernel,
        stride,
        padding,
        groups,
    )
    .unwrap()
}

pub fn rand_bn(seed: u64, c: usize) -> BatchNormParams {
    let mut bn = BatchNormParams::identity(c, 1e-5);
    Initializer::new(seed ^ 0x5eed).batch_norm_stats(&mut bn);
    bn
}

pub fn rand_tensor(seed: u64, dims: [usize; 4]) -> Tensor {
    let mut init = Initializer::new(seed ^ 0xdead);
    let n = dims.iter().product();
    Tensor::new(dims, init.uniform(n, -1.0, 1.0)).unwrap()
}

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Direct convolution in f64, one output element at a time.
pub fn conv_f64(x: &[f64], dims: [usize; 4], conv: &ConvParams) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, w] = dims;
    assert_eq!(c, conv.in_channels);
    let (kh, kw) = conv.kernel;
    let (sh, sw) = conv.stride;
    let (ph, pw) = conv.padding;
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let cin = conv.in_channels / conv.groups;
    let opg = conv.out_channels / conv.groups;
    let mut out = vec![0.0; n * conv.out_channels * oh * ow];
    for b in 0..n {
        for o in 0..conv.out_channels {
            let g = o / opg;
            for r in 0..oh {
                for q in 0..ow {
                    let mut acc = conv.bias[o] as f64;
                    for l in 0..cin {
                        let ci = g * cin + l;
                        for i in 0..kh {
                            for j in 0..kw {
                                let (y, xx) = ((r * sh + i) as isize - ph as isize, (q * sw + j) as isize - pw as isize);
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let wv = conv.weight[((o * cin + l) * kh + i) * kw + j] as f64;
                                acc += wv * x[((b * c + ci) * h + y as usize) * w + xx as usize];
                            }
                        }
                    }
                    out[((b * conv.out_channels + o) * oh + r) * ow + q] = acc;
                }
            }
        }
    }
    (out, [n, conv.out_channels, oh, ow])
}

/// Same loop nest in f32 with the crate's documented summation order:
/// start from zero, add `w * x` over (input channel, row tap, column tap)
/// skipping padded taps, then add the bias.
pub fn conv_f32_nested(x: &Tensor, conv: &ConvParams) -> Tensor {
    let [n, c, h, w] = x.dims();
    let (kh, kw) = conv.kernel;
    let (sh, sw) = conv.stride;
    let (ph, pw) = conv.padding;
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let cin = conv.in_channels / conv.groups;
    let opg = conv.out_channels / conv.groups;
    let xd = x.data();
    let mut out = vec![0.0f32; n * conv.out_channels * oh * ow];
    for b in 0..n {
        for o in 0..conv.out_channels {
            let g = o / opg;
            for r in 0..oh {
                for q in 0..ow {
                    let mut acc = 0.0f32;
                    for l in 0..cin {
                        let ci = g * cin + l;
                        for i in 0..kh {
                            for j in 0..kw {
                                let (y, xx) = ((r * sh + i) as isize - ph as isize, (q * sw + j) as isize - pw as isize);
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                acc += conv.weight[((o * cin + l) * kh + i) * kw + j]
                                    * xd[((b * c + ci) * h + y as usize) * w + xx as usize];
                            }
                        }
                    }
                    out[((b * conv.out_channels + o) * oh + r) * ow + q] = acc + conv.bias[o];
                }
            }
        }
    }
    Tensor::new([n, conv.out_channels, oh, ow], out).unwrap()
}

/// Evaluation-mode batch norm straight from its definition, in f64.
pub fn bn_f64(x: &[f64], dims: [usize; 4], bn: &BatchNormParams) -> Vec<f64> {
    let [_, c, h, w] = dims;
    x.iter()
        .enumerate()
        .map(|(idx, &v)| {
            let ch = (idx / (h * w)) % c;
            let denom = (bn.running_var[ch] as f64 + bn.eps as f64).sqrt();
            (v - bn.running_mean[ch] as f64) / denom * bn.gamma[ch] as f64 + bn.beta[ch] as f64
        })
        .collect()
}

pub fn pad_f64(x: &[f64], dims: [usize; 4], ph: usize, pw: usize) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, w] = dims;
    let (hh, ww) = (h + 2 * ph, w + 2 * pw);
    let mut out = vec![0.0; n * c * hh * ww];
    for p in 0..n * c {
        for r in 0..h {
            for q in 0..w {
                out[(p * hh + r + ph) * ww + q + pw] = x[(p * h + r) * w + q];
            }
        }
    }
    (out, [n, c, hh, ww])
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Small but complete FastViT-style config that exercises every block kind.
pub fn tiny_config() -> VariantConfig {
    VariantConfig {
        name: "tiny".into(),
        channels: [8, 16, 32, 64],
        depths: [1, 1, 2, 1],
        mixers: [MixerKind::RepMixer, MixerKind::RepMixer, MixerKind::Attention, MixerKind::Attention],
        expansion: 2,
        mixer_kernel: 3,
        pool_kernel: 3,
        dw_kernel: 7,
        large_kernel: [LargeKernelSite::Ffn, LargeKernelSite::PatchEmbed].into(),
        overparam_n: 2,
        factorized: true,
        activation: fastvit_core::ops::Activation::Gelu,
        norm: fastvit_core::NormKind::Batch,
        layer_scale: Some(0.5),
        cpe: CpePlacement::AttentionStages,
        cpe_kernel: 7,
        head_dim: 8,
        in_channels: 3,
        num_classes: 10,
    }
}
