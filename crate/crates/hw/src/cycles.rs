//! Closed-form cycle counts for 3×3 input-stationary systolic cores.
//!
//! A core holds one 3×3 window per input channel and retires one window
//! (nine MACs) per cycle once full. An output channel is one job: its
//! `H_out·W_out·C_in` window tiles are issued back to back and the job
//! drains through the array (`rows + cols - 2` cycles) before the next job
//! starts. Output channels go round-robin over the cores.

use anoise::layer::LayerKind;
use serde::{Deserialize, Serialize};

use crate::error::{HwError, Result};
use crate::fixed::QFormat;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HwConfig {
    pub num_conv_cores: usize,
    pub num_cancel_lanes: usize,
    pub lut_bits: u32,
    pub pipeline_fill: u64,
    pub cancel_pipeline_depth: u64,
    /// Only used to convert cycles to time in reports.
    pub clock_mhz: f64,
    pub frac_bits: u32,
    /// Run the two heads concurrently on half the cores each.
    pub head_parallel: bool,
}

impl Default for HwConfig {
    fn default() -> Self {
        Self {
            num_conv_cores: 4,
            num_cancel_lanes: 4,
            lut_bits: 10,
            pipeline_fill: 4,
            cancel_pipeline_depth: 8,
            clock_mhz: 500.0,
            frac_bits: 8,
            head_parallel: false,
        }
    }
}

impl HwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_conv_cores == 0 || self.num_cancel_lanes == 0 {
            return Err(HwError::Config("core and lane counts must be at least 1".into()));
        }
        if self.pipeline_fill == 0 || self.cancel_pipeline_depth == 0 {
            return Err(HwError::Config("pipeline depths must be at least 1".into()));
        }
        if !(self.clock_mhz > 0.0) {
            return Err(HwError::Config("clock_mhz must be positive".into()));
        }
        if self.head_parallel && self.num_conv_cores < 2 {
            return Err(HwError::Config("head_parallel needs at least 2 cores".into()));
        }
        self.qformat().validate()?;
        if !(2..=16).contains(&self.lut_bits) {
            return Err(HwError::Config(format!("lut_bits must be in 2..=16, got {}", self.lut_bits)));
        }
        Ok(())
    }

    pub fn qformat(&self) -> QFormat {
        QFormat {
            frac_bits: self.frac_bits,
        }
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Standard and pointwise convolution: `⌈C_out/cores⌉ · (H_out·W_out·C_in + fill)`.
pub fn conv_cycles(c_in: usize, c_out: usize, h_out: usize, w_out: usize, cores: usize, fill: u64) -> u64 {
    ceil_div(c_out as u64, cores as u64) * ((h_out * w_out * c_in) as u64 + fill)
}

/// Depthwise convolution: `⌈C/cores⌉ · (H_out·W_out + fill)`.
pub fn depthwise_cycles(channels: usize, h_out: usize, w_out: usize, cores: usize, fill: u64) -> u64 {
    ceil_div(channels as u64, cores as u64) * ((h_out * w_out) as u64 + fill)
}

/// One element per unit per cycle (leaky ReLU shift-add, pooling adds).
pub fn elementwise_cycles(elements: usize, units: usize) -> u64 {
    ceil_div(elements as u64, units as u64)
}

pub fn cancel_cycles(elements: usize, lanes: usize, depth: u64) -> u64 {
    ceil_div(elements as u64, lanes as u64) + depth
}

/// One backbone layer as the cycle model sees it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl LayerShape {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.c_in, self.c_out, self.h_in, self.w_in, self.h_out, self.w_out];
        if dims.contains(&0) {
            return Err(crate::error::shape("layer shape", format!("zero dimension in {self:?}")));
        }
        if self.kind == LayerKind::DepthwiseConv2d && self.c_in != self.c_out {
            return Err(crate::error::shape(
                "depthwise layer shape",
                format!("{} input channels, {} output", self.c_in, self.c_out),
            ));
        }
        Ok(())
    }
}

/// Per-image cycles of one backbone layer.
pub fn layer_cycles(shape: &LayerShape, cfg: &HwConfig) -> u64 {
    let cores = cfg.num_conv_cores;
    match shape.kind {
        LayerKind::Conv2d | LayerKind::PointwiseConv2d | LayerKind::Linear => conv_cycles(
            shape.c_in,
            shape.c_out,
            shape.h_out,
            shape.w_out,
            cores,
            cfg.pipeline_fill,
        ),
        LayerKind::DepthwiseConv2d => {
            depthwise_cycles(shape.c_out, shape.h_out, shape.w_out, cores, cfg.pipeline_fill)
        }
        LayerKind::LeakyRelu => elementwise_cycles(shape.c_out * shape.h_out * shape.w_out, cores),
        LayerKind::GlobalAvgPool => elementwise_cycles(shape.c_in * shape.h_in * shape.w_in, cores),
    }
}
