//! Criteria 5 and 6: the fixed-point DCU against the float block quantized
//! at every writeback, and the closed-form cycle counts against a
//! cycle-stepped array simulation.

use std::collections::VecDeque;

use anoise::denoiser::DenoiserParams;
use anoise::layer::{LayerDesc, LayerKind, LEAKY_SLOPE};
use anoise::ops::{layer_forward, leaky_relu};
use anoise::Tensor4;
use anoise_hw::conv::{fx_conv, FxLayer};
use anoise_hw::cycles::{layer_cycles, LayerShape};
use anoise_hw::dcu::{dcu_run, FxDenoiser};
use anoise_hw::{dequantize, quantize, FxTensor, HwConfig, LfsrBank, QFormat, Unc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Check, Failure};

fn random(shape: [usize; 4], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor4 {
    Tensor4::from_fn(shape, |_| r.random_range(lo..hi))
}

fn trained_like(c: usize, r: &mut ChaCha8Rng) -> Result<DenoiserParams, Failure> {
    let mut p = DenoiserParams::init(c, 0.25, r.random())?;
    for (_, l) in p.parts_mut() {
        if let Some(w) = &mut l.weight {
            *w = random(w.shape(), -0.6, 0.6, r);
        }
        if let Some(b) = &mut l.bias {
            b.iter_mut().for_each(|v| *v = r.random_range(-0.2..0.2));
        }
    }
    Ok(p)
}

/// The float block with weights on the Q grid, every unit's output rounded
/// to the grid, and ε taken from the same LFSR lanes the DCU uses.
fn quantized_denoiser_forward(p: &DenoiserParams, x: &FxTensor, unc: &Unc, bank: &LfsrBank, q: QFormat) -> FxTensor {
    let round = |v: f64| q.dequantize_scalar(q.quantize_scalar(v));
    let on_grid = |l: &LayerDesc| {
        let mut l = l.clone();
        if let Some(w) = &mut l.weight {
            *w = w.map(round);
        }
        if let Some(b) = &mut l.bias {
            b.iter_mut().for_each(|v| *v = round(*v));
        }
        l
    };
    let qz = |t: Tensor4| dequantize(&quantize(&t, q));
    let mut lanes: Vec<_> = (0..bank.lanes()).map(|i| bank.lane(i)).collect();
    let one = q.one() as f64;
    let (lo, hi) = (i16::MIN as f64, i16::MAX as f64);
    let mut outs = Vec::new();
    for i in 0..x.shape()[0] {
        let xi = dequantize(&x.sample(i));
        let t = qz(leaky_relu(&qz(layer_forward(&xi, &on_grid(&p.pw_reduce)).unwrap()), LEAKY_SLOPE));
        let t = qz(leaky_relu(&qz(layer_forward(&t, &on_grid(&p.dw)).unwrap()), LEAKY_SLOPE));
        let mu = qz(layer_forward(&t, &on_grid(&p.head_mean)).unwrap());
        let sigma = qz(layer_forward(&t, &on_grid(&p.head_scale)).unwrap());
        let raw: Vec<i16> = (0..xi.len())
            .map(|e| {
                let (a, b) = &mut lanes[e % bank.lanes()];
                let eps = q.dequantize_scalar(unc.z1_words(a.next_word(), b.next_word()));
                let noise = ((eps * sigma.data()[e] * one).round_ties_even() + mu.data()[e] * one).clamp(lo, hi);
                (xi.data()[e] * one - noise).clamp(lo, hi) as i16
            })
            .collect();
        outs.push(FxTensor::from_raw(xi.shape(), raw, q).unwrap());
    }
    FxTensor::concat(&outs).unwrap()
}

pub fn functional() -> Check {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mut elements = 0;
    for (case, lanes) in [1usize, 2, 4, 4, 7, 4].into_iter().enumerate() {
        let cfg = HwConfig { num_cancel_lanes: lanes, ..HwConfig::default() };
        let q = cfg.qformat();
        let c = [8, 16, 12][case % 3];
        let p = trained_like(c, &mut r)?;
        let block = FxDenoiser::from_params(&p, q)?;
        let x = quantize(&random([2, c, 6, 5], -3.0, 3.0, &mut r), q);
        let unc = Unc::new(cfg.lut_bits, q)?;
        let bank = LfsrBank::from_seed(case as u64, lanes)?;
        let (hw, _) = dcu_run(&block, &x, &cfg, &unc, &mut bank.clone())?;
        let reference = quantized_denoiser_forward(&p, &x, &unc, &bank, q);
        ensure!(hw == reference, "case {case}: DCU output differs from the quantized block");
        elements += hw.len();
    }

    let q = QFormat::default();
    let mut layers = 0;
    for _ in 0..40 {
        let kind = [LayerKind::Conv2d, LayerKind::DepthwiseConv2d, LayerKind::PointwiseConv2d, LayerKind::Linear]
            [r.random_range(0..4)];
        let cin = r.random_range(1..9);
        let cout = if kind == LayerKind::DepthwiseConv2d { cin } else { r.random_range(1..13) };
        let k = if kind == LayerKind::Conv2d || kind == LayerKind::DepthwiseConv2d { 3 } else { 1 };
        let (stride, pad) = if k == 3 { (r.random_range(1..3), 1) } else { (1, 0) };
        let bias = Some((0..cout).map(|_| r.random_range(-0.5..0.5)).collect());
        let desc = match kind {
            LayerKind::Conv2d => LayerDesc::conv2d(cin, cout, 3, stride, pad, random([cout, cin, 3, 3], -1.0, 1.0, &mut r), bias),
            LayerKind::DepthwiseConv2d => LayerDesc::depthwise(cin, 3, stride, pad, random([cin, 1, 3, 3], -1.0, 1.0, &mut r), bias),
            LayerKind::PointwiseConv2d => LayerDesc::pointwise(cin, cout, random([cout, cin, 1, 1], -1.0, 1.0, &mut r), bias),
            _ => LayerDesc::linear(cin, cout, random([cout, cin, 1, 1], -1.0, 1.0, &mut r), bias),
        }?;
        let side = if kind == LayerKind::Linear { 1 } else { r.random_range(3..9) };
        let x = quantize(&random([2, cin, side, side], -2.0, 2.0, &mut r), q);
        let layer = FxLayer::from_desc(&desc, q)?;
        let one_core = fx_conv(&layer, &x, 1)?;
        for cores in 2..=12 {
            ensure!(fx_conv(&layer, &x, cores)? == one_core, "{kind:?} differs on {cores} cores");
        }
        layers += 1;
    }
    Ok(format!(
        "6 blocks ({elements} outputs) bitwise equal to the quantized float block with hardware epsilon; {layers} random layers identical on 1..=12 cores"
    ))
}

const ROWS: usize = 3;
const COLS: usize = 3;

/// One 3×3 input-stationary core. A tile issued at cycle `t` sits in
/// PE(r, c) at `t + r + c`; the next job starts once the array has drained.
struct Core {
    jobs: VecDeque<usize>,
    to_issue: usize,
    in_flight: Vec<usize>,
    busy: bool,
    macs: usize,
}

impl Core {
    fn step(&mut self) -> Result<(), Failure> {
        if !self.busy {
            match self.jobs.pop_front() {
                Some(tiles) => {
                    self.to_issue = tiles;
                    self.busy = true;
                }
                None => return Ok(()),
            }
        }
        if self.to_issue > 0 {
            self.in_flight.push(0);
            self.to_issue -= 1;
        }
        let mut grid = [[false; COLS]; ROWS];
        for &age in &self.in_flight {
            for (r, row) in grid.iter_mut().enumerate() {
                for (c, pe) in row.iter_mut().enumerate() {
                    if r + c == age {
                        ensure!(!*pe, "two tiles in PE({r},{c})");
                        *pe = true;
                        self.macs += 1;
                    }
                }
            }
        }
        self.in_flight.retain(|&a| a < ROWS + COLS - 2);
        self.in_flight.iter_mut().for_each(|a| *a += 1);
        if self.to_issue == 0 && self.in_flight.is_empty() {
            self.busy = false;
        }
        Ok(())
    }
}

/// One job per output channel, dealt round-robin to the cores.
fn simulate(tiles_per_channel: usize, channels: usize, cores: usize) -> Result<(u64, usize), Failure> {
    let mut cs: Vec<Core> = (0..cores)
        .map(|k| Core {
            jobs: (k..channels).step_by(cores).map(|_| tiles_per_channel).collect(),
            to_issue: 0,
            in_flight: vec![],
            busy: false,
            macs: 0,
        })
        .collect();
    let mut cycles = 0;
    while cs.iter().any(|c| c.busy || !c.jobs.is_empty()) {
        for c in &mut cs {
            c.step()?;
        }
        cycles += 1;
    }
    Ok((cycles, cs.iter().map(|c| c.macs).sum()))
}

pub fn cycles() -> Check {
    let fill = HwConfig::default().pipeline_fill;
    ensure!(fill == (ROWS + COLS - 2) as u64, "default fill {fill} is not the array drain depth");
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let kinds = [LayerKind::Conv2d, LayerKind::PointwiseConv2d, LayerKind::DepthwiseConv2d];
    let mut total = 0;
    for i in 0..100 {
        let kind = kinds[r.random_range(0..3)];
        let c_in = r.random_range(1..12);
        let c_out = if kind == LayerKind::DepthwiseConv2d { c_in } else { r.random_range(1..12) };
        let stride = if kind == LayerKind::PointwiseConv2d { 1 } else { r.random_range(1..3) };
        let (h_in, w_in) = (r.random_range(1..10), r.random_range(1..10));
        let out = |s: usize| if kind == LayerKind::PointwiseConv2d { s } else { (s + 2 - 3) / stride + 1 };
        let (h_out, w_out) = (out(h_in), out(w_in));
        let cores = r.random_range(1..9);
        let cfg = HwConfig { num_conv_cores: cores, ..HwConfig::default() };
        let shape = LayerShape { kind, c_in, c_out, h_in, w_in, h_out, w_out };
        let tiles = match kind {
            LayerKind::DepthwiseConv2d => h_out * w_out,
            _ => h_out * w_out * c_in,
        };
        let (sim, macs) = simulate(tiles, c_out, cores)?;
        ensure!(macs == tiles * c_out * ROWS * COLS, "shape {i}: {macs} MACs");
        let closed = layer_cycles(&shape, &cfg);
        ensure!(closed == sim, "shape {i} {shape:?} on {cores} cores: closed form {closed}, simulation {sim}");
        total += sim;
    }
    Ok(format!("100 random shapes agree exactly ({total} simulated cycles)"))
}
