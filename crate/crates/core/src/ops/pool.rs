use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Tokens};

/// `AvgPool_k(x) - x` with stride 1 and `(k-1)/2` zero padding.
///
/// The window divisor is always `k*k`, padded zeros included, so border outputs of a
/// constant plane are not zero.
pub fn pooling_mixer(input: &Tensor, k: usize) -> Result<Tensor> {
    if k % 2 == 0 {
        return Err(Error::config(format!("pooling kernel must be odd, got {k}")));
    }
    let [_, _, h, w] = input.dims();
    let pad = (k - 1) / 2;
    let div = (k * k) as f32;
    let mut out = input.clone();
    let plane = h * w;
    let x = input.data();
    out.data_mut().par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let src = &x[idx * plane..(idx + 1) * plane];
        for r in 0..h {
            for q in 0..w {
                let mut acc = 0.0f32;
                for i in 0..k {
                    let ih = r + i;
                    if ih < pad || ih - pad >= h {
                        continue;
                    }
                    for j in 0..k {
                        let iw = q + j;
                        if iw < pad || iw - pad >= w {
                            continue;
                        }
                        acc += src[(ih - pad) * w + iw - pad];
                    }
                }
                dst[r * w + q] = acc / div - src[r * w + q];
            }
        }
    });
    Ok(out)
}

/// Mean over each spatial plane, giving (N, 1, C) tokens.
pub fn global_avg_pool(input: &Tensor) -> Tokens {
    let [n, c, _, _] = input.dims();
    let count = input.plane_len() as f32;
    let mut data = Vec::with_capacity(n * c);
    for b in 0..n {
        for ch in 0..c {
            let sum: f32 = input.plane(b, ch).iter().sum();
            data.push(sum / count);
        }
    }
    Tokens {
        batch: n,
        len: 1,
        dim: c,
        data,
    }
}
