use rayon::prelude::*;

use super::linear::linear;
use crate::error::{Error, Result};
use crate::params::ConvParams;
use crate::tensor::Tokens;

/// Multi-head scaled dot-product self-attention.
///
/// `qkv` maps D -> 3D with the output laid out as `[q | k | v]`; head `h` owns features
/// `h*hd..(h+1)*hd` of each part. Scores are scaled by `1/sqrt(hd)` and softmaxed over keys.
pub fn mhsa(tokens: &Tokens, qkv: &ConvParams, proj: &ConvParams, heads: usize) -> Result<Tokens> {
    let d = tokens.dim;
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!("dim {d} not divisible by {heads} heads")));
    }
    if qkv.out_channels != 3 * d || proj.in_channels != d || proj.out_channels != d {
        return Err(Error::shape(
            "mhsa",
            format!("qkv {d}->{} and proj {d}->{d}", 3 * d),
            format!(
                "qkv {}->{}, proj {}->{}",
                qkv.in_channels, qkv.out_channels, proj.in_channels, proj.out_channels
            ),
        ));
    }
    let hd = d / heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let packed = linear(tokens, qkv)?;
    let (n, l) = (tokens.batch, tokens.len);
    let row = |b: usize, t: usize| &packed.data[(b * l + t) * 3 * d..(b * l + t + 1) * 3 * d];

    let mut mixed = vec![0.0f32; n * l * d];
    mixed.par_chunks_mut(d).enumerate().for_each(|(idx, dst)| {
        let (b, i) = (idx / l, idx % l);
        let q_row = row(b, i);
        let mut scores = vec![0.0f32; l];
        for h in 0..heads {
            let q = &q_row[h * hd..(h + 1) * hd];
            let mut max = f32::NEG_INFINITY;
            for (j, s) in scores.iter_mut().enumerate() {
                let k = &row(b, j)[d + h * hd..d + (h + 1) * hd];
                let mut dot = 0.0f32;
                for (a, c) in q.iter().zip(k) {
                    dot += a * c;
                }
                *s = dot * scale;
                max = max.max(*s);
            }
            let mut sum = 0.0f32;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let out = &mut dst[h * hd..(h + 1) * hd];
            out.fill(0.0);
            for (j, s) in scores.iter().enumerate() {
                let p = s / sum;
                let v = &row(b, j)[2 * d + h * hd..2 * d + (h + 1) * hd];
                for (o, vv) in out.iter_mut().zip(v) {
                    *o += p * vv;
                }
            }
        }
    });
    let mixed = Tokens::new(n, l, d, mixed)?;
    linear(&mixed, proj)
}
