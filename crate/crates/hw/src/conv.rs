//! Fixed-point convolution core and leaky ReLU unit.

use anoise::layer::{LayerDesc, LayerKind};

use crate::error::{HwError, Result};
use crate::fixed::{quantize, round_shift, saturate, FxTensor, QFormat, ACC_BITS};

/// A convolution or linear layer with quantized weights and biases.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FxLayer {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: FxTensor,
    pub bias: Option<Vec<i16>>,
}

impl FxLayer {
    pub fn from_desc(layer: &LayerDesc, q: QFormat) -> Result<Self> {
        if !layer.kind.is_mvm() {
            return Err(HwError::Config(format!(
                "{} has no weights to quantize",
                layer.kind.name()
            )));
        }
        let weight = layer.weight.as_ref().ok_or_else(|| {
            HwError::Config(format!("{} layer has no weight tensor", layer.kind.name()))
        })?;
        Ok(Self {
            kind: layer.kind,
            in_channels: layer.in_channels,
            out_channels: layer.out_channels,
            kernel: layer.kernel,
            stride: layer.stride,
            padding: layer.padding,
            weight: quantize(weight, q),
            bias: layer
                .bias
                .as_ref()
                .map(|b| b.iter().map(|&v| q.quantize_scalar(v)).collect()),
        })
    }

    fn groups(&self) -> usize {
        if self.kind == LayerKind::DepthwiseConv2d {
            self.in_channels
        } else {
            1
        }
    }
}

/// Integer MACs into a 40-bit accumulator, bias added at double precision,
/// one round-half-even at writeback. Output channels are dealt round-robin
/// to `cores`; the result does not depend on the core count.
pub fn fx_conv(layer: &FxLayer, x: &FxTensor, cores: usize) -> Result<FxTensor> {
    let q = x.qformat();
    if layer.weight.qformat() != q {
        return Err(HwError::Config("weights and activations use different Q formats".into()));
    }
    if cores == 0 {
        return Err(HwError::Config("at least one core is required".into()));
    }
    let [n, c, h, w] = x.shape();
    if c != layer.in_channels {
        return Err(crate::error::shape(
            "fixed-point conv",
            format!("input has {c} channels, layer expects {}", layer.in_channels),
        ));
    }
    let (k, s, p) = (layer.kernel, layer.stride, layer.padding);
    if h + 2 * p < k || w + 2 * p < k {
        return Err(crate::error::shape(
            "fixed-point conv",
            format!("{h}x{w} input smaller than {k}x{k} kernel"),
        ));
    }
    let ho = (h + 2 * p - k) / s + 1;
    let wo = (w + 2 * p - k) / s + 1;
    let cout = layer.out_channels;
    let groups = layer.groups();
    let cin_g = c / groups;
    let cout_g = cout / groups;
    let f = q.frac_bits;
    let limit = 1i64 << (ACC_BITS - 1);
    let check = |acc: i64| {
        if acc >= limit || acc < -limit {
            Err(HwError::Overflow {
                value: acc,
                bits: ACC_BITS,
            })
        } else {
            Ok(())
        }
    };
    let wt = layer.weight.raw();
    let xr = x.raw();
    let mut out = vec![0i16; n * cout * ho * wo];
    for core in 0..cores {
        for co in (core..cout).step_by(cores) {
            let g = co / cout_g;
            let bias = layer.bias.as_ref().map_or(0, |b| (b[co] as i64) << f);
            for b in 0..n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias;
                        for ci in 0..cin_g {
                            let plane = (b * c + g * cin_g + ci) * h * w;
                            let wbase = (co * cin_g + ci) * k * k;
                            for ky in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += xr[plane + iy as usize * w + ix as usize] as i64
                                        * wt[wbase + ky * k + kx] as i64;
                                }
                            }
                            check(acc)?;
                        }
                        out[((b * cout + co) * ho + oy) * wo + ox] = saturate(round_shift(acc, f));
                    }
                }
            }
        }
    }
    FxTensor::from_raw([n, cout, ho, wo], out, q)
}

/// Negative inputs are divided by 128 with round-half-even.
pub fn fx_leaky_relu(x: &FxTensor) -> FxTensor {
    let mut y = x.clone();
    for v in y.raw_mut() {
        if *v < 0 {
            *v = round_shift(*v as i64, 7) as i16;
        }
    }
    y
}
