//! Dense activation containers.

use std::fmt;

use crate::error::{Error, Result};

/// Rank-4 tensor in N, C, H, W order, row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    dims: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", "all dims > 0", format!("{dims:?}")));
        }
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::shape(
                "tensor",
                format!("{len} elements for {dims:?}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: [usize; 4], value: f32) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "tensor dims must be positive: {dims:?}");
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize) -> f32) -> Self {
        let len = dims.iter().product();
        Self::new(dims, (0..len).map(&mut f).collect()).expect("valid dims")
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        let [_, cs, hs, ws] = self.dims;
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    /// One (n, c) spatial plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.plane_len();
        let start = (n * self.dims[1] + c) * p;
        &self.data[start..start + p]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise sum; shapes must agree.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(
                "add",
                format!("{:?}", self.dims),
                format!("{:?}", other.dims),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    /// Surrounds every plane with `ph` rows and `pw` columns of zeros.
    pub fn zero_pad(&self, ph: usize, pw: usize) -> Tensor {
        if ph == 0 && pw == 0 {
            return self.clone();
        }
        let [n, c, h, w] = self.dims;
        let (hp, wp) = (h + 2 * ph, w + 2 * pw);
        let mut data = vec![0.0; n * c * hp * wp];
        for (idx, src) in self.data.chunks(h * w).enumerate() {
            let dst = &mut data[idx * hp * wp..(idx + 1) * hp * wp];
            for r in 0..h {
                dst[(r + ph) * wp + pw..(r + ph) * wp + pw + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
        }
        Tensor {
            dims: [n, c, hp, wp],
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.dims != other.dims {
            return Err(Error::shape(
                "max_abs_diff",
                format!("{:?}", self.dims),
                format!("{:?}", other.dims),
            ));
        }
        Ok(max_abs_diff(&self.data, &other.data))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.dims)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

/// Token matrix of shape (N, L, D), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokens {
    pub batch: usize,
    pub len: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl Tokens {
    pub fn new(batch: usize, len: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if batch == 0 || len == 0 || dim == 0 || data.len() != batch * len * dim {
            return Err(Error::shape(
                "tokens",
                format!("({batch}, {len}, {dim}) non-empty"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self { batch, len, dim, data })
    }

    /// (N, C, H, W) -> (N, H*W, C)
    pub fn from_nchw(x: &Tensor) -> Self {
        let [n, c, h, w] = x.dims();
        let l = h * w;
        let mut data = vec![0.0; n * l * c];
        for b in 0..n {
            for ch in 0..c {
                let plane = x.plane(b, ch);
                for (p, &v) in plane.iter().enumerate() {
                    data[(b * l + p) * c + ch] = v;
                }
            }
        }
        Self { batch: n, len: l, dim: c, data }
    }

    /// Inverse of [`Tokens::from_nchw`].
    pub fn to_nchw(&self, h: usize, w: usize) -> Result<Tensor> {
        if h * w != self.len {
            return Err(Error::shape(
                "tokens_to_nchw",
                format!("{} tokens", self.len),
                format!("{h}x{w}"),
            ));
        }
        let (n, l, c) = (self.batch, self.len, self.dim);
        let mut data = vec![0.0; n * c * l];
        for b in 0..n {
            for p in 0..l {
                let row = &self.data[(b * l + p) * c..(b * l + p + 1) * c];
                for (ch, &v) in row.iter().enumerate() {
                    data[(b * c + ch) * l + p] = v;
                }
            }
        }
        Tensor::new([n, c, h, w], data)
    }

    pub fn row(&self, b: usize, t: usize) -> &[f32] {
        let start = (b * self.len + t) * self.dim;
        &self.data[start..start + self.dim]
    }
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max)
}
