//! Whole-network cycle accounting and its CSV forms.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anoise::denoiser::bottleneck_channels;
use anoise::graph::ModelGraph;
use anoise::layer::LayerKind;

use crate::cycles::{layer_cycles, HwConfig, LayerShape};
use crate::dcu::{denoiser_phases, Phase};
use crate::error::{HwError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleRow {
    pub layer: usize,
    pub phase: Phase,
    pub cycles: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCycles {
    pub layer: usize,
    pub kind: LayerKind,
    pub baseline: u64,
    pub denoiser: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleReport {
    /// Execution order: each layer's base row, then its block's phases.
    pub rows: Vec<CycleRow>,
    pub layers: Vec<LayerCycles>,
    pub total_without: u64,
    pub total_with: u64,
}

impl CycleReport {
    pub fn overhead_pct(&self) -> f64 {
        overhead_pct(self.total_without, self.total_with)
    }

    /// Layers whose cycle count grew because of a block.
    pub fn denoised_layers(&self) -> Vec<usize> {
        self.layers.iter().filter(|l| l.denoiser > 0).map(|l| l.layer).collect()
    }

    /// `layer,phase,cycles,cumulative`
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("layer,phase,cycles,cumulative\n");
        let mut cumulative = 0;
        for r in &self.rows {
            cumulative += r.cycles;
            let _ = writeln!(s, "{},{},{},{}", r.layer, r.phase, r.cycles, cumulative);
        }
        s
    }

    /// `layer,kind,baseline_cycles,denoiser_cycles,total_cycles`
    pub fn layers_csv(&self) -> String {
        let mut s = String::from("layer,kind,baseline_cycles,denoiser_cycles,total_cycles\n");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                l.layer,
                l.kind.name(),
                l.baseline,
                l.denoiser,
                l.baseline + l.denoiser
            );
        }
        s
    }

    /// `# key=value` lines with the totals.
    pub fn summary_lines(&self, clock_mhz: f64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# total_without={}", self.total_without);
        let _ = writeln!(s, "# total_with={}", self.total_with);
        let _ = writeln!(s, "# overhead_pct={}", self.overhead_pct());
        let _ = writeln!(s, "# latency_us_without={}", self.total_without as f64 / clock_mhz);
        let _ = writeln!(s, "# latency_us_with={}", self.total_with as f64 / clock_mhz);
        s
    }
}

pub fn overhead_pct(without: u64, with: u64) -> f64 {
    if without == 0 {
        return 0.0;
    }
    (with as f64 - without as f64) / without as f64 * 100.0
}

/// Per-image cycles of a network with blocks of the given bottleneck width
/// after some layers.
pub fn simulate(
    layers: &[LayerShape],
    denoisers: &BTreeMap<usize, usize>,
    cfg: &HwConfig,
) -> Result<CycleReport> {
    cfg.validate()?;
    if let Some((&bad, _)) = denoisers.range(layers.len()..).next() {
        return Err(HwError::Config(format!(
            "denoiser at layer {bad}, network has {} layers",
            layers.len()
        )));
    }
    let mut rows = Vec::new();
    let mut per_layer = Vec::with_capacity(layers.len());
    for (i, shape) in layers.iter().enumerate() {
        shape.validate()?;
        let baseline = layer_cycles(shape, cfg);
        rows.push(CycleRow {
            layer: i,
            phase: Phase::Base,
            cycles: baseline,
        });
        let mut extra = 0;
        if let Some(&b) = denoisers.get(&i) {
            for p in denoiser_phases(shape.c_out, b, shape.h_out, shape.w_out, cfg) {
                extra += p.cycles;
                rows.push(CycleRow {
                    layer: i,
                    phase: p.phase,
                    cycles: p.cycles,
                });
            }
        }
        per_layer.push(LayerCycles {
            layer: i,
            kind: shape.kind,
            baseline,
            denoiser: extra,
        });
    }
    let total_without = per_layer.iter().map(|l| l.baseline).sum();
    let total_with = rows.iter().map(|r| r.cycles).sum();
    Ok(CycleReport {
        rows,
        layers: per_layer,
        total_without,
        total_with,
    })
}

/// Layer shapes of a model for a single image, and the bottleneck width of
/// every attached block.
pub fn model_shapes(model: &ModelGraph) -> Result<(Vec<LayerShape>, BTreeMap<usize, usize>)> {
    let acts = model.activation_shapes(1)?;
    let mut input = [1, model.input_shape[0], model.input_shape[1], model.input_shape[2]];
    let mut shapes = Vec::with_capacity(model.layers.len());
    for (layer, out) in model.layers.iter().zip(&acts) {
        shapes.push(LayerShape {
            kind: layer.kind,
            c_in: input[1],
            c_out: out[1],
            h_in: input[2],
            w_in: input[3],
            h_out: out[2],
            w_out: out[3],
        });
        input = *out;
    }
    let blocks = model
        .attachments
        .iter()
        .map(|(&i, d)| (i, d.bottleneck))
        .collect();
    Ok((shapes, blocks))
}

pub const SHAPE_TABLE_HEADER: &str = "kind,c_in,c_out,h_in,w_in,h_out,w_out,denoiser_ratio";

/// Parses a shape table: `#` comments, the header row, then one layer per
/// row. A positive `denoiser_ratio` attaches a block of that ratio.
pub fn parse_shape_table(text: &str) -> Result<(Vec<LayerShape>, BTreeMap<usize, usize>)> {
    let mut shapes = Vec::new();
    let mut blocks = BTreeMap::new();
    let mut saw_header = false;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        let err = |detail: String| HwError::Table { line: ln + 1, detail };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != SHAPE_TABLE_HEADER {
                return Err(err(format!("expected header `{SHAPE_TABLE_HEADER}`")));
            }
            saw_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, got {}", f.len())));
        }
        let kind = LayerKind::from_name(f[0]).ok_or_else(|| err(format!("unknown kind `{}`", f[0])))?;
        let num = |i: usize| -> Result<usize> {
            f[i].parse().map_err(|_| err(format!("bad integer `{}`", f[i])))
        };
        let shape = LayerShape {
            kind,
            c_in: num(1)?,
            c_out: num(2)?,
            h_in: num(3)?,
            w_in: num(4)?,
            h_out: num(5)?,
            w_out: num(6)?,
        };
        shape.validate().map_err(|e| err(e.to_string()))?;
        let ratio: f64 = f[7].parse().map_err(|_| err(format!("bad ratio `{}`", f[7])))?;
        if !(ratio >= 0.0 && ratio <= 1.0) {
            return Err(err(format!("ratio {ratio} outside [0, 1]")));
        }
        if ratio > 0.0 {
            blocks.insert(shapes.len(), bottleneck_channels(shape.c_out, ratio));
        }
        shapes.push(shape);
    }
    if !saw_header {
        return Err(HwError::Table {
            line: 0,
            detail: "missing header row".into(),
        });
    }
    Ok((shapes, blocks))
}
