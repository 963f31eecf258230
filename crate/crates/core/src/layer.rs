//! Layer descriptors for the supported layer zoo.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Negative-side slope of every leaky ReLU (a right shift by 7 in hardware).
pub const LEAKY_SLOPE: f64 = 1.0 / 128.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv2d,
    DepthwiseConv2d,
    PointwiseConv2d,
    LeakyRelu,
    GlobalAvgPool,
    Linear,
}

impl LayerKind {
    pub const ALL: [LayerKind; 6] = [
        LayerKind::Conv2d,
        LayerKind::DepthwiseConv2d,
        LayerKind::PointwiseConv2d,
        LayerKind::LeakyRelu,
        LayerKind::GlobalAvgPool,
        LayerKind::Linear,
    ];

    /// Inverse of [`LayerKind::name`].
    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn is_conv(self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d | LayerKind::DepthwiseConv2d | LayerKind::PointwiseConv2d
        )
    }

    /// Layers that perform a matrix-vector product, i.e. the ones an analog
    /// array would execute.
    pub fn is_mvm(self) -> bool {
        self.is_conv() || self == LayerKind::Linear
    }

    pub fn has_params(self) -> bool {
        self.is_mvm()
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::DepthwiseConv2d => "depthwise-conv2d",
            LayerKind::PointwiseConv2d => "pointwise-conv2d",
            LayerKind::LeakyRelu => "leaky-relu",
            LayerKind::GlobalAvgPool => "global-avg-pool",
            LayerKind::Linear => "linear",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerDesc {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(out, in / groups, k, k)` for convolutions, `(out, in, 1, 1)` for linear.
    pub weight: Option<Tensor4>,
    pub bias: Option<Vec<f64>>,
    pub trainable: bool,
    pub noise_enabled: bool,
}

impl LayerDesc {
    fn parametric(
        kind: LayerKind,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: Tensor4,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        let layer = Self {
            kind,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Some(weight),
            bias,
            trainable: true,
            noise_enabled: false,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn conv2d(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: Tensor4,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        Self::parametric(
            LayerKind::Conv2d,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias,
        )
    }

    pub fn depthwise(
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: Tensor4,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        Self::parametric(
            LayerKind::DepthwiseConv2d,
            channels,
            channels,
            kernel,
            stride,
            padding,
            weight,
            bias,
        )
    }

    pub fn pointwise(
        in_channels: usize,
        out_channels: usize,
        weight: Tensor4,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        Self::parametric(
            LayerKind::PointwiseConv2d,
            in_channels,
            out_channels,
            1,
            1,
            0,
            weight,
            bias,
        )
    }

    pub fn linear(
        in_features: usize,
        out_features: usize,
        weight: Tensor4,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        Self::parametric(
            LayerKind::Linear,
            in_features,
            out_features,
            1,
            1,
            0,
            weight,
            bias,
        )
    }

    fn parameterless(kind: LayerKind, channels: usize) -> Self {
        Self {
            kind,
            in_channels: channels,
            out_channels: channels,
            kernel: 1,
            stride: 1,
            padding: 0,
            weight: None,
            bias: None,
            trainable: false,
            noise_enabled: false,
        }
    }

    pub fn leaky_relu(channels: usize) -> Self {
        Self::parameterless(LayerKind::LeakyRelu, channels)
    }

    pub fn global_avg_pool(channels: usize) -> Self {
        Self::parameterless(LayerKind::GlobalAvgPool, channels)
    }

    pub fn groups(&self) -> usize {
        match self.kind {
            LayerKind::DepthwiseConv2d => self.in_channels,
            _ => 1,
        }
    }

    pub fn weight_shape(&self) -> Option<[usize; 4]> {
        let k = self.kernel;
        match self.kind {
            LayerKind::Conv2d => Some([self.out_channels, self.in_channels, k, k]),
            LayerKind::DepthwiseConv2d => Some([self.out_channels, 1, k, k]),
            LayerKind::PointwiseConv2d | LayerKind::Linear => {
                Some([self.out_channels, self.in_channels, 1, 1])
            }
            LayerKind::LeakyRelu | LayerKind::GlobalAvgPool => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.as_ref().map_or(0, Tensor4::len) + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = || format!("{} layer", self.kind.name());
        if self.stride == 0 {
            return Err(Error::shape(ctx(), "stride must be at least 1"));
        }
        match self.kind {
            LayerKind::PointwiseConv2d if self.kernel != 1 => {
                return Err(Error::shape(ctx(), format!("kernel {} != 1", self.kernel)));
            }
            LayerKind::DepthwiseConv2d if self.in_channels != self.out_channels => {
                return Err(Error::shape(
                    ctx(),
                    format!(
                        "in_channels {} != out_channels {}",
                        self.in_channels, self.out_channels
                    ),
                ));
            }
            LayerKind::LeakyRelu | LayerKind::GlobalAvgPool => {
                if self.in_channels != self.out_channels {
                    return Err(Error::shape(ctx(), "channel count must be preserved"));
                }
            }
            _ => {}
        }
        match (self.weight_shape(), &self.weight) {
            (Some(expected), Some(w)) if w.shape() != expected => Err(Error::shape(
                ctx(),
                format!("weight shape {:?}, expected {:?}", w.shape(), expected),
            )),
            (Some(_), None) => Err(Error::shape(ctx(), "missing weight")),
            (None, Some(_)) => Err(Error::shape(ctx(), "unexpected weight")),
            _ => match &self.bias {
                Some(b) if b.len() != self.out_channels => Err(Error::shape(
                    ctx(),
                    format!("bias length {}, expected {}", b.len(), self.out_channels),
                )),
                Some(_) if !self.kind.has_params() => Err(Error::shape(ctx(), "unexpected bias")),
                _ => Ok(()),
            },
        }
    }

    /// Output shape for an input of shape `input`.
    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let [n, c, h, w] = input;
        if c != self.in_channels {
            return Err(Error::shape(
                format!("{} layer", self.kind.name()),
                format!("input has {c} channels, layer expects {}", self.in_channels),
            ));
        }
        match self.kind {
            LayerKind::Conv2d | LayerKind::DepthwiseConv2d | LayerKind::PointwiseConv2d => {
                let (ho, wo) = conv_out_hw(h, w, self.kernel, self.stride, self.padding)
                    .ok_or_else(|| {
                        Error::shape(
                            format!("{} layer", self.kind.name()),
                            format!(
                                "input {h}x{w} too small for kernel {} with padding {}",
                                self.kernel, self.padding
                            ),
                        )
                    })?;
                Ok([n, self.out_channels, ho, wo])
            }
            LayerKind::LeakyRelu => Ok(input),
            LayerKind::GlobalAvgPool => Ok([n, c, 1, 1]),
            LayerKind::Linear => {
                if h != 1 || w != 1 {
                    return Err(Error::shape(
                        "linear layer",
                        format!("expects (n, {c}, 1, 1) input, got spatial {h}x{w}"),
                    ));
                }
                Ok([n, self.out_channels, 1, 1])
            }
        }
    }
}

pub fn conv_out_hw(
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<(usize, usize)> {
    let hp = h + 2 * padding;
    let wp = w + 2 * padding;
    if hp < kernel || wp < kernel || stride == 0 {
        return None;
    }
    Some(((hp - kernel) / stride + 1, (wp - kernel) / stride + 1))
}
