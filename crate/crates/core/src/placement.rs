//! Budgeted denoiser placement by output-gradient norm.
//!
//! To first order, noise `z` on layer output `y_l` changes the loss by
//! `zᵀ∇_{y_l}L`, so layers whose output gradients are large are the ones
//! where noise hurts most. Layers are scored by the batch-mean per-sample L2
//! norm of that gradient on the clean model, ranked, and given denoisers
//! greedily until the parameter budget is used up.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::denoiser::denoiser_param_count;
use crate::error::{Error, Result};
use crate::graph::{backward, forward, Attachment, ModelGraph, Mode, Sampling};
use crate::loss::softmax_minus_onehot;
use crate::tensor::Tensor4;

pub const DEFAULT_ETA_PCT: f64 = 4.0;
pub const DEFAULT_CALIB_SAMPLES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerScore {
    pub layer_index: usize,
    pub score: f64,
}

/// Computes `(1/N) Σ_n ‖∇_{y_l} L(x_n)‖₂` for every MVM layer `l`.
///
/// `per_sample_grad` maps logits to the per-sample loss gradient (row `n`
/// is `∂L(x_n)/∂logits_n`). Denoisers and noise are ignored: scores always
/// come from the clean backbone.
pub fn output_grad_scores(
    model: &ModelGraph,
    x: &Tensor4,
    per_sample_grad: impl Fn(&Tensor4, std::ops::Range<usize>) -> Result<Tensor4>,
    chunk: usize,
) -> Result<Vec<LayerScore>> {
    if x.n() == 0 {
        return Err(Error::Empty("calibration batch"));
    }
    let mut clean = model.without_attachments();
    for layer in &mut clean.layers {
        layer.trainable = false;
    }
    let mvm: Vec<usize> = clean
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.kind.is_mvm())
        .map(|(i, _)| i)
        .collect();
    let mut sums = vec![0.0; mvm.len()];
    let chunk = chunk.max(1);
    for start in (0..x.n()).step_by(chunk) {
        let count = chunk.min(x.n() - start);
        let xb = x.slice_batch(start, count);
        let (logits, tape) = forward(&clean, &xb, Mode::Clean, Sampling::Seeded(0))?;
        let g = per_sample_grad(&logits, start..start + count)?;
        let grads = backward(&clean, &tape, &g, true)?;
        let outputs = grads.outputs.expect("requested output gradients");
        for (k, &l) in mvm.iter().enumerate() {
            let go = &outputs[l];
            for n in 0..count {
                sums[k] += go.sample(n).iter().map(|v| v * v).sum::<f64>().sqrt();
            }
        }
    }
    Ok(mvm
        .into_iter()
        .zip(sums)
        .map(|(layer_index, s)| LayerScore {
            layer_index,
            score: s / x.n() as f64,
        })
        .collect())
}

/// Cross-entropy gradient-norm scores on a labelled calibration batch.
pub fn layer_grad_scores(
    model: &ModelGraph,
    images: &Tensor4,
    labels: &[usize],
) -> Result<Vec<LayerScore>> {
    if labels.len() != images.n() {
        return Err(Error::shape(
            "calibration batch",
            format!("{} images, {} labels", images.n(), labels.len()),
        ));
    }
    output_grad_scores(
        model,
        images,
        |logits, range| softmax_minus_onehot(logits, &labels[range]).map(|(_, g)| g),
        64,
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Skip a layer that does not fit and keep going down the ranking.
    #[default]
    FirstFit,
    /// Stop at the first layer that does not fit.
    StopAtOverflow,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanEntry {
    pub layer_index: usize,
    pub channels: usize,
    pub score: f64,
    pub param_cost: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacementPlan {
    /// Selected layers in descending score order.
    pub entries: Vec<PlanEntry>,
    pub total_cost: usize,
    pub budget: usize,
    pub eta_pct: f64,
    pub ratio: f64,
    pub backbone_params: usize,
    pub scores: Vec<LayerScore>,
}

/// Candidate layers in ranking order: descending score, ties to the lower
/// layer index.
pub fn rank(scores: &[LayerScore]) -> Vec<LayerScore> {
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.layer_index.cmp(&b.layer_index))
    });
    ranked
}

/// Greedy budgeted selection.
///
/// `channel_map` lists the layers that may receive a denoiser and their
/// channel counts; scored layers outside it are not candidates.
pub fn select_layers(
    scores: &[LayerScore],
    eta_pct: f64,
    backbone_param_count: usize,
    channel_map: &BTreeMap<usize, usize>,
    ratio: f64,
    mode: SelectionMode,
) -> Result<PlacementPlan> {
    if !eta_pct.is_finite() || eta_pct < 0.0 {
        return Err(Error::Config(format!("eta must be non-negative, got {eta_pct}")));
    }
    let budget = (eta_pct / 100.0 * backbone_param_count as f64).floor() as usize;
    let mut entries = Vec::new();
    let mut total = 0;
    for s in rank(scores) {
        let Some(&channels) = channel_map.get(&s.layer_index) else {
            continue;
        };
        let cost = denoiser_param_count(channels, ratio);
        if total + cost <= budget {
            total += cost;
            entries.push(PlanEntry {
                layer_index: s.layer_index,
                channels,
                score: s.score,
                param_cost: cost,
            });
        } else if mode == SelectionMode::StopAtOverflow {
            break;
        }
    }
    Ok(PlacementPlan {
        entries,
        total_cost: total,
        budget,
        eta_pct,
        ratio,
        backbone_params: backbone_param_count,
        scores: scores.to_vec(),
    })
}

/// Layers of `model` that can host a denoiser, with their channel counts.
pub fn channel_map(model: &ModelGraph) -> Result<BTreeMap<usize, usize>> {
    let shapes = model.activation_shapes(1)?;
    Ok(model
        .conv_layers()
        .into_iter()
        .filter(|&i| model.is_spatial(i))
        .map(|i| (i, shapes[i][1]))
        .collect())
}

/// Scores a model on a calibration batch and selects layers under `eta_pct`.
pub fn plan_for_model(
    model: &ModelGraph,
    images: &Tensor4,
    labels: &[usize],
    eta_pct: f64,
    ratio: f64,
    mode: SelectionMode,
) -> Result<PlacementPlan> {
    let scores = layer_grad_scores(model, images, labels)?;
    select_layers(
        &scores,
        eta_pct,
        model.backbone_param_count(),
        &channel_map(model)?,
        ratio,
        mode,
    )
}

impl PlacementPlan {
    pub fn attachments(&self) -> Vec<Attachment> {
        self.entries
            .iter()
            .map(|e| Attachment {
                layer_index: e.layer_index,
                ratio: self.ratio,
            })
            .collect()
    }

    pub fn overhead_pct(&self) -> f64 {
        if self.backbone_params == 0 {
            return 0.0;
        }
        self.total_cost as f64 / self.backbone_params as f64 * 100.0
    }

    /// Text plan file: `#` header lines, then one CSV row per selected layer.
    pub fn to_text(&self, seed: u64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# anoise placement plan");
        let _ = writeln!(s, "# seed={seed}");
        let _ = writeln!(s, "# eta_pct={}", self.eta_pct);
        let _ = writeln!(s, "# ratio={}", self.ratio);
        let _ = writeln!(s, "# backbone_params={}", self.backbone_params);
        let _ = writeln!(s, "# budget={}", self.budget);
        for sc in &self.scores {
            let _ = writeln!(s, "# score layer={} value={}", sc.layer_index, sc.score);
        }
        let _ = writeln!(s, "layer_index,channels,score,cost,cumulative_cost");
        let mut cumulative = 0;
        for e in &self.entries {
            cumulative += e.param_cost;
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.layer_index, e.channels, e.score, e.param_cost, cumulative
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Manifest(format!("plan file: {msg}"));
        let mut header: BTreeMap<String, String> = BTreeMap::new();
        let mut scores = Vec::new();
        let mut entries = Vec::new();
        let mut saw_columns = false;
        let mut cumulative = 0;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(score) = rest.strip_prefix("score ") {
                    let mut layer = None;
                    let mut value = None;
                    for kv in score.split_whitespace() {
                        match kv.split_once('=') {
                            Some(("layer", v)) => layer = v.parse().ok(),
                            Some(("value", v)) => value = v.parse().ok(),
                            _ => {}
                        }
                    }
                    match (layer, value) {
                        (Some(layer_index), Some(score)) => {
                            scores.push(LayerScore { layer_index, score })
                        }
                        _ => return Err(bad(format!("bad score line `{line}`"))),
                    }
                } else if let Some((k, v)) = rest.split_once('=') {
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if !saw_columns {
                if line != "layer_index,channels,score,cost,cumulative_cost" {
                    return Err(bad(format!("unexpected column header `{line}`")));
                }
                saw_columns = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields in `{line}`")));
            }
            let p = |i: usize| -> Result<usize> {
                f[i].parse().map_err(|_| bad(format!("bad integer `{}`", f[i])))
            };
            let entry = PlanEntry {
                layer_index: p(0)?,
                channels: p(1)?,
                score: f[2].parse().map_err(|_| bad(format!("bad score `{}`", f[2])))?,
                param_cost: p(3)?,
            };
            cumulative += entry.param_cost;
            if p(4)? != cumulative {
                return Err(bad(format!("cumulative cost mismatch in `{line}`")));
            }
            entries.push(entry);
        }
        if !saw_columns {
            return Err(bad("missing column header".into()));
        }
        let get = |k: &str| -> Result<&String> {
            header.get(k).ok_or_else(|| bad(format!("missing `{k}` header")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| bad(format!("bad `{k}` value")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| bad(format!("bad `{k}` value")))
        };
        Ok(Self {
            total_cost: cumulative,
            budget: int("budget")?,
            eta_pct: num("eta_pct")?,
            ratio: num("ratio")?,
            backbone_params: int("backbone_params")?,
            entries,
            scores,
        })
    }
}
