//! Direct convolution.
//!
//! Every output element is accumulated from `+0.0` over (input channel, kernel row,
//! kernel column) in that order, skipping taps that fall in the zero padding, and
//! the bias is added last. The work split across threads is per output plane, so
//! the order per element never depends on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::ConvParams;
use crate::tensor::Tensor;

/// Spatial tile width for the pointwise kernel.
const PW_TILE: usize = 64;
/// Output channels computed together in the pointwise kernel.
const PW_OUT_BLOCK: usize = 8;

pub fn conv2d(input: &Tensor, conv: &ConvParams) -> Result<Tensor> {
    conv.validate()?;
    let [n, c, h, w] = input.dims();
    if c != conv.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!("input with {} channels for {}", conv.in_channels, conv.describe()),
            format!("{:?}", input.dims()),
        ));
    }
    let (oh, ow) = conv.output_hw(h, w)?;
    let oc = conv.out_channels;
    let mut out = vec![0.0f32; n * oc * oh * ow];
    let x = input.data();

    if conv.is_pointwise() && conv.stride == (1, 1) && conv.groups == 1 {
        let hw = h * w;
        let block = PW_OUT_BLOCK * hw;
        let blocks_per_item = oc.div_ceil(PW_OUT_BLOCK);
        // Chunks never straddle batch items: split per item first.
        out.par_chunks_mut(oc * hw)
            .enumerate()
            .for_each(|(b, item)| {
                let xb = &x[b * c * hw..(b + 1) * c * hw];
                item.par_chunks_mut(block)
                    .enumerate()
                    .for_each(|(ob, dst)| {
                        let o0 = ob * PW_OUT_BLOCK;
                        pointwise_block(xb, hw, conv, o0, dst);
                    });
                debug_assert_eq!(item.len().div_ceil(block), blocks_per_item);
            });
    } else {
        let plane = oh * ow;
        out.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
            let b = idx / oc;
            let o = idx % oc;
            let xb = &x[b * c * h * w..(b + 1) * c * h * w];
            conv_plane(xb, h, w, conv, o, dst, oh, ow);
        });
    }
    Tensor::new([n, oc, oh, ow], out)
}

#[allow(clippy::too_many_arguments)]
fn conv_plane(x: &[f32], h: usize, w: usize, conv: &ConvParams, o: usize, dst: &mut [f32], oh: usize, ow: usize) {
    let (kh, kw) = conv.kernel;
    let (sh, sw) = conv.stride;
    let (ph, pw) = conv.padding;
    let cin = conv.in_per_group();
    let first = conv.input_channel(o, 0);
    let filter = conv.filter(o);
    dst.fill(0.0);

    for ci in 0..cin {
        let xp = &x[(first + ci) * h * w..(first + ci + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let wv = filter[(ci * kh + i) * kw + j];
                let Some((lo, hi)) = valid_range(ow, sw, j, pw, w) else {
                    continue;
                };
                for r in 0..oh {
                    let ih = r * sh + i;
                    if ih < ph || ih - ph >= h {
                        continue;
                    }
                    let xrow = &xp[(ih - ph) * w..(ih - ph + 1) * w];
                    let orow = &mut dst[r * ow..(r + 1) * ow];
                    if sw == 1 {
                        let start = lo + j - pw;
                        for (acc, xv) in orow[lo..hi].iter_mut().zip(&xrow[start..start + hi - lo]) {
                            *acc += wv * xv;
                        }
                    } else {
                        for (q, acc) in orow.iter_mut().enumerate().take(hi).skip(lo) {
                            *acc += wv * xrow[q * sw + j - pw];
                        }
                    }
                }
            }
        }
    }
    let bias = conv.bias[o];
    for v in dst.iter_mut() {
        *v += bias;
    }
}

/// Output columns `[lo, hi)` whose tap `j` lands inside the unpadded row.
#[inline]
fn valid_range(ow: usize, sw: usize, j: usize, pw: usize, w: usize) -> Option<(usize, usize)> {
    // need 0 <= q*sw + j - pw < w
    let lo = if pw > j { (pw - j).div_ceil(sw) } else { 0 };
    if w + pw <= j {
        return None;
    }
    let hi = ((w + pw - j - 1) / sw + 1).min(ow);
    (lo < hi).then_some((lo, hi))
}

/// Up to `PW_OUT_BLOCK` output planes of a dense stride-1 1x1 convolution.
fn pointwise_block(x: &[f32], hw: usize, conv: &ConvParams, o0: usize, dst: &mut [f32]) {
    let cin = conv.in_channels;
    let nb = dst.len() / hw;
    let weights: Vec<&[f32]> = (0..nb).map(|k| conv.filter(o0 + k)).collect();

    let mut start = 0;
    while start < hw {
        let len = PW_TILE.min(hw - start);
        let mut acc = [[0.0f32; PW_TILE]; PW_OUT_BLOCK];
        if len == PW_TILE && nb == PW_OUT_BLOCK {
            for ci in 0..cin {
                let xs: &[f32; PW_TILE] = x[ci * hw + start..ci * hw + start + PW_TILE]
                    .try_into()
                    .expect("tile");
                let ws: [f32; PW_OUT_BLOCK] = std::array::from_fn(|k| weights[k][ci]);
                for (a, wv) in acc.iter_mut().zip(ws) {
                    for p in 0..PW_TILE {
                        a[p] += wv * xs[p];
                    }
                }
            }
        } else {
            for ci in 0..cin {
                let xs = &x[ci * hw + start..ci * hw + start + len];
                for (k, wk) in weights.iter().enumerate() {
                    let wv = wk[ci];
                    for (a, xv) in acc[k][..len].iter_mut().zip(xs) {
                        *a += wv * xv;
                    }
                }
            }
        }
        for k in 0..nb {
            let bias = conv.bias[o0 + k];
            for (d, a) in dst[k * hw + start..k * hw + start + len].iter_mut().zip(&acc[k][..len]) {
                *d = a + bias;
            }
        }
        start += len;
    }
}
