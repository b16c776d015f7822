//! Parameter bundles shared by the kernels, the fusion algebra and the blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Epsilon used by every normalization layer the model builder creates.
pub const NORM_EPS: f32 = 1e-5;

/// Full parameterization of a 2-D convolution.
///
/// Weights are laid out `(out_channels, in_channels / groups, kh, kw)`.
/// Every convolution carries a bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvParams {
    pub fn new(
        weight: Vec<f32>,
        bias: Vec<f32>,
        out_channels: usize,
        in_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
    ) -> Result<Self> {
        let conv = Self {
            weight,
            bias,
            out_channels,
            in_channels,
            kernel,
            stride,
            padding,
            groups,
        };
        conv.validate()?;
        Ok(conv)
    }

    /// All-zero convolution with "same" padding for odd kernels.
    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self> {
        if groups == 0 || in_channels % groups != 0 {
            return Err(Error::config(format!(
                "in_channels {in_channels} not divisible by groups {groups}"
            )));
        }
        Self::new(
            vec![0.0; out_channels * (in_channels / groups) * kernel * kernel],
            vec![0.0; out_channels],
            out_channels,
            in_channels,
            (kernel, kernel),
            (stride, stride),
            (kernel / 2, kernel / 2),
            groups,
        )
    }

    /// Pointwise convolution used as a dense `in -> out` linear map.
    pub fn linear(weight: Vec<f32>, bias: Vec<f32>, out_features: usize, in_features: usize) -> Result<Self> {
        Self::new(weight, bias, out_features, in_features, (1, 1), (1, 1), (0, 0), 1)
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if self.groups == 0
            || self.out_channels == 0
            || self.in_channels == 0
            || kh == 0
            || kw == 0
            || self.stride.0 == 0
            || self.stride.1 == 0
        {
            return Err(Error::config(format!("degenerate convolution {}", self.describe())));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::config(format!(
                "channels not divisible by groups in {}",
                self.describe()
            )));
        }
        let expected = self.out_channels * self.in_per_group() * kh * kw;
        if self.weight.len() != expected {
            return Err(Error::shape(
                "conv_params",
                format!("{expected} weights for {}", self.describe()),
                format!("{} weights", self.weight.len()),
            ));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::shape(
                "conv_params",
                format!("{} bias values", self.out_channels),
                format!("{}", self.bias.len()),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    #[inline]
    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    #[inline]
    pub fn kernel_area(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.padding == (0, 0)
    }

    /// Weight tensor dims `(out, in/groups, kh, kw)`.
    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_per_group(), self.kernel.0, self.kernel.1]
    }

    /// Weights of one output channel, `(in/groups, kh, kw)` flattened.
    pub fn filter(&self, out: usize) -> &[f32] {
        let len = self.in_per_group() * self.kernel_area();
        &self.weight[out * len..(out + 1) * len]
    }

    pub fn filter_mut(&mut self, out: usize) -> &mut [f32] {
        let len = self.in_per_group() * self.kernel_area();
        &mut self.weight[out * len..(out + 1) * len]
    }

    /// Absolute input channel of group-local index `local` for output channel `out`.
    #[inline]
    pub fn input_channel(&self, out: usize, local: usize) -> usize {
        (out / self.out_per_group()) * self.in_per_group() + local
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        let (sh, sw) = self.stride;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::shape(
                "conv2d",
                format!("padded input at least {kh}x{kw}"),
                format!("{h}x{w} with padding ({ph}, {pw})"),
            ));
        }
        Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn describe(&self) -> String {
        format!(
            "conv(out={}, in={}, k={}x{}, s={:?}, p={:?}, g={})",
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
            self.stride,
            self.padding,
            self.groups
        )
    }

    /// True when two convolutions have identical geometry (everything but values).
    pub fn same_geometry(&self, other: &ConvParams) -> bool {
        self.out_channels == other.out_channels
            && self.in_channels == other.in_channels
            && self.kernel == other.kernel
            && self.stride == other.stride
            && self.padding == other.padding
            && self.groups == other.groups
    }
}

/// Evaluation-mode batch normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
}

impl BatchNormParams {
    pub fn new(
        gamma: Vec<f32>,
        beta: Vec<f32>,
        running_mean: Vec<f32>,
        running_var: Vec<f32>,
        eps: f32,
    ) -> Result<Self> {
        let bn = Self {
            gamma,
            beta,
            running_mean,
            running_var,
            eps,
        };
        bn.validate()?;
        Ok(bn)
    }

    /// gamma = 1, beta = 0, mean = 0, var = 1.
    pub fn identity(channels: usize, eps: f32) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if c == 0 || self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::shape(
                "batch_norm",
                format!("{c} entries in every statistic"),
                format!(
                    "beta={}, mean={}, var={}",
                    self.beta.len(),
                    self.running_mean.len(),
                    self.running_var.len()
                ),
            ));
        }
        if self.running_var.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::config("batch norm running_var must be non-negative"));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::config("batch norm eps must be non-negative"));
        }
        Ok(())
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(scale, shift)` such that `bn(x) = scale * x + shift`.
    pub fn affine(&self) -> (Vec<f32>, Vec<f32>) {
        let scale: Vec<f32> = self
            .gamma
            .iter()
            .zip(&self.running_var)
            .map(|(g, v)| g / (v + self.eps).sqrt())
            .collect();
        let shift = self
            .beta
            .iter()
            .zip(&self.running_mean)
            .zip(&scale)
            .map(|((b, m), s)| b - m * s)
            .collect();
        (scale, shift)
    }

    pub fn param_count(&self) -> usize {
        4 * self.channels()
    }
}

/// Layer normalization over the channel axis at every spatial position.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub eps: f32,
}

impl LayerNormParams {
    pub fn identity(channels: usize, eps: f32) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Batch,
    Layer,
}

/// A normalization layer as it appears inside a block.
#[derive(Clone, Debug, PartialEq)]
pub enum Norm {
    Batch(BatchNormParams),
    Layer(LayerNormParams),
}

impl Norm {
    pub fn identity(kind: NormKind, channels: usize) -> Self {
        match kind {
            NormKind::Batch => Norm::Batch(BatchNormParams::identity(channels, NORM_EPS)),
            NormKind::Layer => Norm::Layer(LayerNormParams::identity(channels, NORM_EPS)),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Norm::Batch(bn) => bn.channels(),
            Norm::Layer(ln) => ln.channels(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Norm::Batch(bn) => bn.param_count(),
            Norm::Layer(ln) => ln.param_count(),
        }
    }

    pub fn kind(&self) -> NormKind {
        match self {
            Norm::Batch(_) => NormKind::Batch,
            Norm::Layer(_) => NormKind::Layer,
        }
    }
}
