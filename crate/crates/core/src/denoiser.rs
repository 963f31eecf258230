//! Bottleneck denoising block.
//!
//! ```text
//! x ─ pw_reduce(C→C_b) ─ lrelu ─ dw 3×3 ─ lrelu ─┬─ head_mean(C_b→C)  = μ̂
//!                                                └─ head_scale(C_b→C) = σ̂
//! Ẑ = ε ⊙ σ̂ + μ̂,  x̂ = x − Ẑ
//! ```
//!
//! The scale head predicts σ̂ itself (not a variance) and is unconstrained in
//! sign: ε is symmetric, so only |σ̂| matters distributionally. Both heads start
//! at zero, so a freshly attached block is an exact identity.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::layer::{LayerDesc, LEAKY_SLOPE};
use crate::ops::{layer_backward, layer_forward, leaky_relu, ParamGrad};
use crate::rng::{purpose, stream};
use crate::tensor::Tensor4;

pub const DEFAULT_RATIO: f64 = 0.25;

/// Sub-layer names, in execution order.
pub const PARTS: [&str; 4] = ["pw_reduce", "dw", "head_mean", "head_scale"];

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams {
    pub channels: usize,
    pub bottleneck: usize,
    pub ratio: f64,
    pub pw_reduce: LayerDesc,
    pub dw: LayerDesc,
    pub head_mean: LayerDesc,
    pub head_scale: LayerDesc,
}

/// `C_b = max(1, ⌊C·r⌋)`.
pub fn bottleneck_channels(channels: usize, ratio: f64) -> usize {
    ((channels as f64 * ratio).floor() as usize).max(1)
}

/// Parameter count of one block, weights and biases included.
pub fn denoiser_param_count(channels: usize, ratio: f64) -> usize {
    let (c, b) = (channels, bottleneck_channels(channels, ratio));
    (c * b + b) + (9 * b + b) + 2 * (b * c + c)
}

fn check_ratio(channels: usize, ratio: f64) -> Result<()> {
    if channels == 0 {
        return Err(Error::Config("denoiser needs at least one channel".into()));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!(
            "bottleneck ratio must lie in (0, 1], got {ratio}"
        )));
    }
    Ok(())
}

impl DenoiserParams {
    /// Uniform `±1/√fan_in` init for the trunk, zeros for both heads.
    pub fn init(channels: usize, ratio: f64, seed: u64) -> Result<Self> {
        check_ratio(channels, ratio)?;
        let b = bottleneck_channels(channels, ratio);
        let mut rng = stream(seed, &[purpose::INIT, channels as u64]);
        let mut uniform = |shape: [usize; 4], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            Tensor4::from_fn(shape, |_| dist.sample(&mut rng))
        };
        let pw_w = uniform([b, channels, 1, 1], channels);
        let pw_b = uniform([1, 1, 1, b], channels).into_vec();
        let dw_w = uniform([b, 1, 3, 3], 9);
        let dw_b = uniform([1, 1, 1, b], 9).into_vec();
        Ok(Self {
            channels,
            bottleneck: b,
            ratio,
            pw_reduce: LayerDesc::pointwise(channels, b, pw_w, Some(pw_b))?,
            dw: LayerDesc::depthwise(b, 3, 1, 1, dw_w, Some(dw_b))?,
            head_mean: LayerDesc::pointwise(
                b,
                channels,
                Tensor4::zeros([channels, b, 1, 1]),
                Some(vec![0.0; channels]),
            )?,
            head_scale: LayerDesc::pointwise(
                b,
                channels,
                Tensor4::zeros([channels, b, 1, 1]),
                Some(vec![0.0; channels]),
            )?,
        })
    }

    pub fn parts(&self) -> [(&'static str, &LayerDesc); 4] {
        [
            (PARTS[0], &self.pw_reduce),
            (PARTS[1], &self.dw),
            (PARTS[2], &self.head_mean),
            (PARTS[3], &self.head_scale),
        ]
    }

    pub fn parts_mut(&mut self) -> [(&'static str, &mut LayerDesc); 4] {
        [
            (PARTS[0], &mut self.pw_reduce),
            (PARTS[1], &mut self.dw),
            (PARTS[2], &mut self.head_mean),
            (PARTS[3], &mut self.head_scale),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.parts().iter().map(|(_, l)| l.param_count()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        check_ratio(self.channels, self.ratio)?;
        let (c, b) = (self.channels, self.bottleneck);
        let ok = self.pw_reduce.in_channels == c
            && self.pw_reduce.out_channels == b
            && self.dw.in_channels == b
            && self.dw.kernel == 3
            && self.dw.padding == 1
            && self.dw.stride == 1
            && self.head_mean.in_channels == b
            && self.head_mean.out_channels == c
            && self.head_scale.in_channels == b
            && self.head_scale.out_channels == c;
        if !ok {
            return Err(Error::shape(
                "denoiser",
                format!("sub-layer shapes inconsistent with C={c}, C_b={b}"),
            ));
        }
        for (_, l) in self.parts() {
            l.validate()?;
        }
        Ok(())
    }
}

/// Draws ε ∼ N(0, I) for one block, keyed per sample.
pub fn sample_epsilon(shape: [usize; 4], seed: u64, layer: usize, sample_ids: &[u64]) -> Tensor4 {
    let mut eps = Tensor4::zeros(shape);
    for (i, &id) in sample_ids.iter().enumerate().take(shape[0]) {
        let mut rng = stream(seed, &[purpose::EPSILON, layer as u64, id]);
        for v in eps.sample_mut(i) {
            *v = rng.sample(StandardNormal);
        }
    }
    eps
}

/// Everything the backward pass needs from one block evaluation.
#[derive(Clone, Debug)]
pub struct DenoiserTrace {
    pub input: Tensor4,
    pub reduced: Tensor4,
    pub reduced_act: Tensor4,
    pub spatial: Tensor4,
    pub trunk: Tensor4,
    pub mean: Tensor4,
    pub scale: Tensor4,
    pub epsilon: Tensor4,
    pub output: Tensor4,
}

pub fn denoiser_forward(
    x: &Tensor4,
    params: &DenoiserParams,
    epsilon: &Tensor4,
) -> Result<DenoiserTrace> {
    if x.c() != params.channels {
        return Err(Error::shape(
            "denoiser",
            format!("input has {} channels, block expects {}", x.c(), params.channels),
        ));
    }
    x.expect_same_shape(epsilon, "denoiser epsilon")?;
    let reduced = layer_forward(x, &params.pw_reduce)?;
    let reduced_act = leaky_relu(&reduced, LEAKY_SLOPE);
    let spatial = layer_forward(&reduced_act, &params.dw)?;
    let trunk = leaky_relu(&spatial, LEAKY_SLOPE);
    let mean = layer_forward(&trunk, &params.head_mean)?;
    let scale = layer_forward(&trunk, &params.head_scale)?;
    let mut output = x.clone();
    for (((o, &e), &s), &m) in output
        .data_mut()
        .iter_mut()
        .zip(epsilon.data())
        .zip(scale.data())
        .zip(mean.data())
    {
        *o -= e * s + m;
    }
    Ok(DenoiserTrace {
        input: x.clone(),
        reduced,
        reduced_act,
        spatial,
        trunk,
        mean,
        scale,
        epsilon: epsilon.clone(),
        output,
    })
}

#[derive(Clone, Debug)]
pub struct DenoiserGrads {
    pub parts: [(&'static str, ParamGrad); 4],
}

fn lrelu_backward(pre: &Tensor4, grad: &Tensor4) -> Result<Tensor4> {
    pre.zip_map(grad, |v, g| if v >= 0.0 { g } else { LEAKY_SLOPE * g })
}

/// Returns `∂L/∂x` and, if requested, gradients of all four sub-layers.
///
/// ε is the recorded sample, so `∂Ẑ/∂σ̂ = ε` and `∂Ẑ/∂μ̂ = 1`.
pub fn denoiser_backward(
    trace: &DenoiserTrace,
    params: &DenoiserParams,
    grad_out: &Tensor4,
    want_params: bool,
) -> Result<(Tensor4, Option<DenoiserGrads>)> {
    trace.output.expect_same_shape(grad_out, "denoiser backward")?;
    let grad_mean = grad_out.scale(-1.0);
    let grad_scale = grad_out.zip_map(&trace.epsilon, |g, e| -g * e)?;
    let (gt_mean, pg_mean) =
        layer_backward(&trace.trunk, &params.head_mean, &grad_mean, want_params)?;
    let (gt_scale, pg_scale) =
        layer_backward(&trace.trunk, &params.head_scale, &grad_scale, want_params)?;
    let grad_trunk = gt_mean.add(&gt_scale)?;
    let grad_spatial = lrelu_backward(&trace.spatial, &grad_trunk)?;
    let (grad_ract, pg_dw) =
        layer_backward(&trace.reduced_act, &params.dw, &grad_spatial, want_params)?;
    let grad_reduced = lrelu_backward(&trace.reduced, &grad_ract)?;
    let (grad_in, pg_pw) =
        layer_backward(&trace.input, &params.pw_reduce, &grad_reduced, want_params)?;
    let grad_x = grad_out.add(&grad_in)?;
    let grads = match (pg_pw, pg_dw, pg_mean, pg_scale) {
        (Some(a), Some(b), Some(c), Some(d)) => Some(DenoiserGrads {
            parts: [(PARTS[0], a), (PARTS[1], b), (PARTS[2], c), (PARTS[3], d)],
        }),
        _ => None,
    };
    Ok((grad_x, grads))
}
