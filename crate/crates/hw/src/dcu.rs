//! Denoiser control unit: runs one block phase by phase on the shared
//! convolution cores, then the cancellation lanes.

use std::fmt;

use anoise::denoiser::DenoiserParams;

use crate::cancel::noise_cancel;
use crate::conv::{fx_conv, fx_leaky_relu, FxLayer};
use crate::cycles::{cancel_cycles, conv_cycles, depthwise_cycles, elementwise_cycles, HwConfig};
use crate::error::{HwError, Result};
use crate::fixed::{FxTensor, QFormat};
use crate::lfsr::LfsrBank;
use crate::unc::Unc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    /// Backbone layer compute.
    Base,
    PwReduce,
    Lrelu1,
    Dw,
    Lrelu2,
    HeadMean,
    HeadScale,
    /// Both heads at once on split cores.
    Heads,
    Cancel,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Base => "base",
            Phase::PwReduce => "pw_reduce",
            Phase::Lrelu1 => "lrelu_1",
            Phase::Dw => "dw",
            Phase::Lrelu2 => "lrelu_2",
            Phase::HeadMean => "head_mean",
            Phase::HeadScale => "head_scale",
            Phase::Heads => "heads",
            Phase::Cancel => "cancel",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            Phase::Base,
            Phase::PwReduce,
            Phase::Lrelu1,
            Phase::Dw,
            Phase::Lrelu2,
            Phase::HeadMean,
            Phase::HeadScale,
            Phase::Heads,
            Phase::Cancel,
        ]
        .into_iter()
        .find(|p| p.name() == s)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseCycles {
    pub phase: Phase,
    pub cycles: u64,
}

/// Per-image phase schedule of a block on a `channels × h × w` activation.
pub fn denoiser_phases(channels: usize, bottleneck: usize, h: usize, w: usize, cfg: &HwConfig) -> Vec<PhaseCycles> {
    let cores = cfg.num_conv_cores;
    let fill = cfg.pipeline_fill;
    let pc = |phase, cycles| PhaseCycles { phase, cycles };
    let mut phases = vec![
        pc(Phase::PwReduce, conv_cycles(channels, bottleneck, h, w, cores, fill)),
        pc(Phase::Lrelu1, elementwise_cycles(bottleneck * h * w, cores)),
        pc(Phase::Dw, depthwise_cycles(bottleneck, h, w, cores, fill)),
        pc(Phase::Lrelu2, elementwise_cycles(bottleneck * h * w, cores)),
    ];
    if cfg.head_parallel {
        // Both heads have the same shape, so the pair takes as long as one
        // head on half the cores.
        let half = (cores / 2).max(1);
        phases.push(pc(Phase::Heads, conv_cycles(bottleneck, channels, h, w, half, fill)));
    } else {
        let head = conv_cycles(bottleneck, channels, h, w, cores, fill);
        phases.push(pc(Phase::HeadMean, head));
        phases.push(pc(Phase::HeadScale, head));
    }
    phases.push(pc(
        Phase::Cancel,
        cancel_cycles(channels * h * w, cfg.num_cancel_lanes, cfg.cancel_pipeline_depth),
    ));
    phases
}

/// A denoising block with quantized parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FxDenoiser {
    pub channels: usize,
    pub bottleneck: usize,
    pub pw_reduce: FxLayer,
    pub dw: FxLayer,
    pub head_mean: FxLayer,
    pub head_scale: FxLayer,
}

impl FxDenoiser {
    pub fn from_params(p: &DenoiserParams, q: QFormat) -> Result<Self> {
        p.validate()?;
        Ok(Self {
            channels: p.channels,
            bottleneck: p.bottleneck,
            pw_reduce: FxLayer::from_desc(&p.pw_reduce, q)?,
            dw: FxLayer::from_desc(&p.dw, q)?,
            head_mean: FxLayer::from_desc(&p.head_mean, q)?,
            head_scale: FxLayer::from_desc(&p.head_scale, q)?,
        })
    }
}

/// Runs the block on each image in turn. Cycle counts are summed over the
/// batch, phase by phase.
pub fn dcu_run(
    block: &FxDenoiser,
    x: &FxTensor,
    cfg: &HwConfig,
    unc: &Unc,
    bank: &mut LfsrBank,
) -> Result<(FxTensor, Vec<PhaseCycles>)> {
    cfg.validate()?;
    let [n, c, h, w] = x.shape();
    if c != block.channels {
        return Err(crate::error::shape(
            "denoiser control unit",
            format!("input has {c} channels, block expects {}", block.channels),
        ));
    }
    if bank.lanes() != cfg.num_cancel_lanes {
        return Err(HwError::Config(format!(
            "LFSR bank has {} lanes, configuration asks for {}",
            bank.lanes(),
            cfg.num_cancel_lanes
        )));
    }
    let cores = cfg.num_conv_cores;
    let mut outputs = Vec::with_capacity(n);
    for i in 0..n {
        let xi = x.sample(i);
        let t = fx_leaky_relu(&fx_conv(&block.pw_reduce, &xi, cores)?);
        let t = fx_leaky_relu(&fx_conv(&block.dw, &t, cores)?);
        let mu = fx_conv(&block.head_mean, &t, cores)?;
        let sigma = fx_conv(&block.head_scale, &t, cores)?;
        let (y, _) = noise_cancel(&xi, &mu, &sigma, unc, bank, cfg.cancel_pipeline_depth)?;
        outputs.push(y);
    }
    let per_image = denoiser_phases(c, block.bottleneck, h, w, cfg);
    let trace = per_image
        .into_iter()
        .map(|p| PhaseCycles {
            phase: p.phase,
            cycles: p.cycles * n as u64,
        })
        .collect();
    let out = if outputs.is_empty() {
        FxTensor::zeros(x.shape(), x.qformat())
    } else {
        FxTensor::concat(&outputs)?
    };
    Ok((out, trace))
}
