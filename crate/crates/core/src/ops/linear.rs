use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::ConvParams;
use crate::tensor::Tokens;

/// Affine map over the feature axis: `y[.., o] = sum_c W[o, c] x[.., c] + b[o]`.
///
/// `weight` must be a dense 1x1 convolution, which is how every linear layer is stored.
pub fn linear(x: &Tokens, weight: &ConvParams) -> Result<Tokens> {
    check_linear(weight)?;
    if x.dim != weight.in_channels {
        return Err(Error::shape(
            "linear",
            format!("{} input features", weight.in_channels),
            format!("({}, {}, {})", x.batch, x.len, x.dim),
        ));
    }
    let (din, dout) = (weight.in_channels, weight.out_channels);
    let mut out = vec![0.0f32; x.batch * x.len * dout];
    out.par_chunks_mut(dout).enumerate().for_each(|(row, dst)| {
        let xr = &x.data[row * din..(row + 1) * din];
        for (o, d) in dst.iter_mut().enumerate() {
            let w = &weight.weight[o * din..(o + 1) * din];
            let mut acc = 0.0f32;
            for (wv, xv) in w.iter().zip(xr) {
                acc += wv * xv;
            }
            *d = acc + weight.bias[o];
        }
    });
    Tokens::new(x.batch, x.len, dout, out)
}

pub(crate) fn check_linear(weight: &ConvParams) -> Result<()> {
    weight.validate()?;
    if weight.kernel != (1, 1) || weight.groups != 1 {
        return Err(Error::config(format!(
            "linear layer must be a dense 1x1 convolution, got {}",
            weight.describe()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_passthrough() {
        let x = Tokens::new(1, 3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let w = ConvParams::linear(vec![1., 0., 0., 1.], vec![0., 0.], 2, 2).unwrap();
        assert_eq!(linear(&x, &w).unwrap(), x);
    }

    #[test]
    fn hand_multiply() {
        // [1, 3] @ [[2,0],[0,2]]^T + [1,1] = [3, 7]
        let x = Tokens::new(1, 1, 2, vec![1., 3.]).unwrap();
        let w = ConvParams::linear(vec![2., 0., 0., 2.], vec![1., 1.], 2, 2).unwrap();
        assert_eq!(linear(&x, &w).unwrap().data, vec![3., 7.]);
    }

    #[test]
    fn feature_mismatch() {
        let x = Tokens::new(1, 1, 3, vec![0.; 3]).unwrap();
        let w = ConvParams::linear(vec![0.; 4], vec![0.; 2], 2, 2).unwrap();
        assert!(matches!(linear(&x, &w), Err(Error::Shape { .. })));
    }
}
