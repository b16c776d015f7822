use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{BatchNormParams, LayerNormParams, Norm};
use crate::tensor::Tensor;

/// Batch normalization with running statistics (evaluation mode only).
pub fn batchnorm_eval(input: &Tensor, bn: &BatchNormParams) -> Result<Tensor> {
    bn.validate()?;
    let [_, c, _, _] = input.dims();
    if c != bn.channels() {
        return Err(Error::shape(
            "batchnorm_eval",
            format!("{} channels", bn.channels()),
            format!("{:?}", input.dims()),
        ));
    }
    let scale: Vec<f32> = bn
        .gamma
        .iter()
        .zip(&bn.running_var)
        .map(|(g, v)| g / (v + bn.eps).sqrt())
        .collect();
    let mut out = input.clone();
    let plane = input.plane_len();
    out.data_mut().par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let ch = idx % c;
        let (s, m, b) = (scale[ch], bn.running_mean[ch], bn.beta[ch]);
        for v in dst.iter_mut() {
            *v = (*v - m) * s + b;
        }
    });
    Ok(out)
}

/// Normalizes the channel vector at every (n, h, w) position.
pub fn layernorm_channels(input: &Tensor, ln: &LayerNormParams) -> Result<Tensor> {
    let [n, c, _, _] = input.dims();
    if c != ln.channels() {
        return Err(Error::shape(
            "layernorm",
            format!("{} channels", ln.channels()),
            format!("{:?}", input.dims()),
        ));
    }
    let plane = input.plane_len();
    let x = input.data();
    let mut out = vec![0.0f32; x.len()];
    out.par_chunks_mut(c * plane).enumerate().for_each(|(b, dst)| {
        let xb = &x[b * c * plane..(b + 1) * c * plane];
        for p in 0..plane {
            let mut mean = 0.0f32;
            for ch in 0..c {
                mean += xb[ch * plane + p];
            }
            mean /= c as f32;
            let mut var = 0.0f32;
            for ch in 0..c {
                let d = xb[ch * plane + p] - mean;
                var += d * d;
            }
            var /= c as f32;
            let inv = 1.0 / (var + ln.eps).sqrt();
            for ch in 0..c {
                dst[ch * plane + p] = (xb[ch * plane + p] - mean) * inv * ln.gamma[ch] + ln.beta[ch];
            }
        }
    });
    debug_assert!(n > 0);
    Tensor::new(input.dims(), out)
}

pub fn apply_norm(input: &Tensor, norm: &Norm) -> Result<Tensor> {
    match norm {
        Norm::Batch(bn) => batchnorm_eval(input, bn),
        Norm::Layer(ln) => layernorm_channels(input, ln),
    }
}
