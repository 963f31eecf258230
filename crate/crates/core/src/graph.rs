//! Sequential model container, forward pass with noise and denoisers, and
//! reverse-mode differentiation over the recorded tape.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Uniform};

use crate::denoiser::{
    denoiser_backward, denoiser_forward, sample_epsilon, DenoiserParams, DenoiserTrace,
};
use crate::error::{Error, Result};
use crate::layer::{LayerDesc, LayerKind};
use crate::noise::{add_noise, draw_noise, NoiseSpec};
use crate::ops::{layer_backward, layer_forward, ParamGrad};
use crate::rng::{purpose, stream};
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    pub classes: usize,
    /// `(c, h, w)` of one input sample.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerDesc>,
    pub attachments: BTreeMap<usize, DenoiserParams>,
    pub noise: NoiseSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Clean,
    Noisy,
}

/// Where the forward pass gets its random draws from.
#[derive(Clone, Copy, Debug)]
pub enum Sampling<'a> {
    /// Fresh draws keyed by `(seed, layer, sample id)`; sample ids are the
    /// batch positions.
    Seeded(u64),
    /// Fresh draws with explicit per-sample stream ids.
    SeededIds(u64, &'a [u64]),
    /// Replays recorded injected noise and ε exactly.
    Replay(&'a Draws),
}

/// Random quantities drawn during one forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Draws {
    /// Additive noise `z` at each noise-enabled layer.
    pub injected: BTreeMap<usize, Tensor4>,
    /// ε at each attached denoiser.
    pub epsilon: BTreeMap<usize, Tensor4>,
}

#[derive(Clone, Debug)]
pub struct TapeEntry {
    pub input: Tensor4,
    pub denoiser: Option<DenoiserTrace>,
}

/// Per-layer record of one forward pass.
#[derive(Clone, Debug)]
pub struct ActivationTape {
    pub entries: Vec<TapeEntry>,
    pub draws: Draws,
}

/// Parameter gradients keyed by tensor name, plus optional gradients with
/// respect to every layer output (before noise and denoising).
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub params: BTreeMap<String, Vec<f64>>,
    pub outputs: Option<Vec<Tensor4>>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).map(Vec::as_slice)
    }
}

pub fn layer_param_name(index: usize, field: &str) -> String {
    format!("layer.{index}.{field}")
}

pub fn denoiser_param_name(index: usize, part: &str, field: &str) -> String {
    format!("denoiser.{index}.{part}.{field}")
}

fn he_uniform(shape: [usize; 4], fan_in: usize, rng: &mut impl rand::Rng) -> Tensor4 {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor4::from_fn(shape, |_| dist.sample(rng))
}

impl ModelGraph {
    pub fn new(name: impl Into<String>, classes: usize, input_shape: [usize; 3]) -> Self {
        Self {
            name: name.into(),
            classes,
            input_shape,
            layers: Vec::new(),
            attachments: BTreeMap::new(),
            noise: NoiseSpec::default(),
        }
    }

    /// Desk-scale reference backbone:
    /// conv3×3(3→32) · lrelu · conv3×3/2(32→32) · lrelu · conv3×3/2(32→64) ·
    /// lrelu · global-avg-pool · linear(64→classes).
    pub fn small_cnn(classes: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[purpose::INIT, u64::MAX]);
        let mut model = Self::new("SmallCNN", classes, [3, 32, 32]);
        let convs = [(3, 32, 1), (32, 32, 2), (32, 64, 2)];
        for (cin, cout, stride) in convs {
            let w = he_uniform([cout, cin, 3, 3], cin * 9, &mut rng);
            model.layers.push(
                LayerDesc::conv2d(cin, cout, 3, stride, 1, w, Some(vec![0.0; cout]))
                    .expect("static shapes"),
            );
            model.layers.push(LayerDesc::leaky_relu(cout));
        }
        model.layers.push(LayerDesc::global_avg_pool(64));
        let bound = 1.0 / 8.0;
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = Tensor4::from_fn([classes, 64, 1, 1], |_| dist.sample(&mut rng));
        model.layers.push(
            LayerDesc::linear(64, classes, w, Some(vec![0.0; classes])).expect("static shapes"),
        );
        model
    }

    /// Indices of the convolution layers.
    pub fn conv_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind.is_conv())
            .map(|(i, _)| i)
            .collect()
    }

    /// Per-layer output shapes for a batch of `n`.
    pub fn activation_shapes(&self, n: usize) -> Result<Vec<[usize; 4]>> {
        let [c, h, w] = self.input_shape;
        let mut shape = [n, c, h, w];
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(shape).map_err(|e| match e {
                Error::Shape { context, detail } => Error::Shape {
                    context: format!("layer {i} ({context})"),
                    detail,
                },
                other => other,
            })?;
            shapes.push(shape);
        }
        Ok(shapes)
    }

    /// Whether layer `index` produces a spatial feature map that a denoiser
    /// can sit on. Linear outputs are logits, not feature maps.
    pub fn is_spatial(&self, index: usize) -> bool {
        let mut spatial = true;
        for layer in &self.layers[..=index] {
            spatial = match layer.kind {
                LayerKind::Linear => false,
                LayerKind::GlobalAvgPool => false,
                LayerKind::LeakyRelu => spatial,
                _ => true,
            };
        }
        spatial
    }

    pub fn validate(&self) -> Result<()> {
        for layer in &self.layers {
            layer.validate()?;
        }
        let shapes = self.activation_shapes(1)?;
        if let Some(last) = shapes.last() {
            if last[1..] != [self.classes, 1, 1] {
                return Err(Error::shape(
                    "model output",
                    format!("final shape {last:?} does not give {} logits", self.classes),
                ));
            }
        }
        for (&i, d) in &self.attachments {
            if i >= self.layers.len() {
                return Err(Error::LayerIndex {
                    index: i,
                    len: self.layers.len(),
                });
            }
            if !self.is_spatial(i) {
                return Err(Error::NonSpatial(i));
            }
            d.validate()?;
            if d.channels != shapes[i][1] {
                return Err(Error::shape(
                    format!("denoiser at layer {i}"),
                    format!("{} channels, layer emits {}", d.channels, shapes[i][1]),
                ));
            }
        }
        self.noise.validate()?;
        for e in &self.noise.entries {
            if e.layer_index >= self.layers.len() {
                return Err(Error::LayerIndex {
                    index: e.layer_index,
                    len: self.layers.len(),
                });
            }
        }
        Ok(())
    }

    /// Parameters of the backbone layers only.
    pub fn backbone_param_count(&self) -> usize {
        self.layers.iter().map(LayerDesc::param_count).sum()
    }

    pub fn denoiser_param_count(&self) -> usize {
        self.attachments.values().map(DenoiserParams::param_count).sum()
    }

    /// Marks every backbone layer frozen.
    pub fn freeze_backbone(&mut self) {
        for layer in &mut self.layers {
            layer.trainable = false;
        }
    }

    /// Visits every parameter tensor as `(name, trainable, values)`.
    pub fn visit_params(&self, mut f: impl FnMut(&str, bool, &[f64])) {
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(w) = &layer.weight {
                f(&layer_param_name(i, "weight"), layer.trainable, w.data());
            }
            if let Some(b) = &layer.bias {
                f(&layer_param_name(i, "bias"), layer.trainable, b);
            }
        }
        for (&i, d) in &self.attachments {
            for (part, layer) in d.parts() {
                if let Some(w) = &layer.weight {
                    f(&denoiser_param_name(i, part, "weight"), layer.trainable, w.data());
                }
                if let Some(b) = &layer.bias {
                    f(&denoiser_param_name(i, part, "bias"), layer.trainable, b);
                }
            }
        }
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&str, bool, &mut [f64])) {
        let visit = |name_w: String, name_b: String, layer: &mut LayerDesc, f: &mut dyn FnMut(&str, bool, &mut [f64])| {
            let trainable = layer.trainable;
            if let Some(w) = &mut layer.weight {
                f(&name_w, trainable, w.data_mut());
            }
            if let Some(b) = &mut layer.bias {
                f(&name_b, trainable, b);
            }
        };
        for (i, layer) in self.layers.iter_mut().enumerate() {
            visit(layer_param_name(i, "weight"), layer_param_name(i, "bias"), layer, &mut f);
        }
        for (&i, d) in self.attachments.iter_mut() {
            for (part, layer) in d.parts_mut() {
                visit(
                    denoiser_param_name(i, part, "weight"),
                    denoiser_param_name(i, part, "bias"),
                    layer,
                    &mut f,
                );
            }
        }
    }

    /// Returns a copy without denoisers.
    pub fn without_attachments(&self) -> Self {
        let mut m = self.clone();
        m.attachments.clear();
        m
    }
}

/// Enables noise on the listed layers and disables it everywhere else.
pub fn apply_noise_spec(model: &mut ModelGraph, spec: &NoiseSpec) -> Result<()> {
    spec.validate()?;
    for e in &spec.entries {
        if e.layer_index >= model.layers.len() {
            return Err(Error::LayerIndex {
                index: e.layer_index,
                len: model.layers.len(),
            });
        }
    }
    for (i, layer) in model.layers.iter_mut().enumerate() {
        layer.noise_enabled = spec.entry(i).is_some();
    }
    model.noise = spec.clone();
    Ok(())
}

/// One denoiser placement request.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Attachment {
    pub layer_index: usize,
    pub ratio: f64,
}

/// Inserts a fresh (identity) denoiser after each listed layer.
pub fn attach(model: &mut ModelGraph, plan: &[Attachment], seed: u64) -> Result<()> {
    let shapes = model.activation_shapes(1)?;
    let mut seen = std::collections::BTreeSet::new();
    for a in plan {
        if a.layer_index >= model.layers.len() {
            return Err(Error::LayerIndex {
                index: a.layer_index,
                len: model.layers.len(),
            });
        }
        if !seen.insert(a.layer_index) || model.attachments.contains_key(&a.layer_index) {
            return Err(Error::DuplicateAttachment(a.layer_index));
        }
        if !model.is_spatial(a.layer_index) {
            return Err(Error::NonSpatial(a.layer_index));
        }
    }
    for a in plan {
        let channels = shapes[a.layer_index][1];
        let params =
            DenoiserParams::init(channels, a.ratio, crate::rng::derive_seed(seed, &[a.layer_index as u64]))?;
        model.attachments.insert(a.layer_index, params);
    }
    Ok(())
}

/// Runs the model, recording everything backward needs.
///
/// In noisy mode, noise is added after each noise-enabled layer and before
/// any attached denoiser. Denoisers themselves are noise-free and draw ε in
/// both modes.
pub fn forward(
    model: &ModelGraph,
    x: &Tensor4,
    mode: Mode,
    sampling: Sampling<'_>,
) -> Result<(Tensor4, ActivationTape)> {
    let [c, h, w] = model.input_shape;
    if x.shape()[1..] != [c, h, w] {
        return Err(Error::shape(
            "model input",
            format!("got {:?}, model expects (n, {c}, {h}, {w})", x.shape()),
        ));
    }
    let default_ids: Vec<u64>;
    let ids = match sampling {
        Sampling::SeededIds(_, ids) => {
            if ids.len() != x.n() {
                return Err(Error::shape(
                    "sample ids",
                    format!("{} ids for batch of {}", ids.len(), x.n()),
                ));
            }
            ids
        }
        _ => {
            default_ids = (0..x.n() as u64).collect();
            &default_ids
        }
    };
    let mut entries = Vec::with_capacity(model.layers.len());
    let mut draws = Draws::default();
    let mut act = x.clone();
    for (i, layer) in model.layers.iter().enumerate() {
        let mut y = layer_forward(&act, layer).map_err(|e| match e {
            Error::Shape { context, detail } => Error::Shape {
                context: format!("layer {i} ({context})"),
                detail,
            },
            other => other,
        })?;
        if mode == Mode::Noisy && layer.noise_enabled {
            if let Some(entry) = model.noise.entry(i) {
                let z = match sampling {
                    Sampling::Replay(d) => d.injected.get(&i).cloned().ok_or_else(|| {
                        Error::TapeMismatch(format!("no recorded noise for layer {i}"))
                    })?,
                    Sampling::Seeded(seed) | Sampling::SeededIds(seed, _) => {
                        draw_noise(&y, entry, model.noise.sigma_mode, seed, i, ids)?
                    }
                };
                y = add_noise(&y, &z, entry)?;
                draws.injected.insert(i, z);
            }
        }
        let mut trace = None;
        if let Some(params) = model.attachments.get(&i) {
            let eps = match sampling {
                Sampling::Replay(d) => d.epsilon.get(&i).cloned().ok_or_else(|| {
                    Error::TapeMismatch(format!("no recorded epsilon for layer {i}"))
                })?,
                Sampling::Seeded(seed) | Sampling::SeededIds(seed, _) => {
                    sample_epsilon(y.shape(), seed, i, ids)
                }
            };
            let t = denoiser_forward(&y, params, &eps)?;
            y = t.output.clone();
            draws.epsilon.insert(i, eps);
            trace = Some(t);
        }
        y.check_finite(&format!("layer {i} ({})", layer.kind.name()))?;
        entries.push(TapeEntry { input: act, denoiser: trace });
        act = y;
    }
    Ok((act, ActivationTape { entries, draws }))
}

/// Logits only.
pub fn predict(model: &ModelGraph, x: &Tensor4, mode: Mode, sampling: Sampling<'_>) -> Result<Tensor4> {
    forward(model, x, mode, sampling).map(|(logits, _)| logits)
}

/// Reverse pass. Injected noise is an additive constant; ε is the recorded
/// sample. Gradients are produced only for trainable tensors; output
/// gradients are kept when `keep_outputs` is set.
pub fn backward(
    model: &ModelGraph,
    tape: &ActivationTape,
    loss_grad: &Tensor4,
    keep_outputs: bool,
) -> Result<Gradients> {
    if tape.entries.len() != model.layers.len() {
        return Err(Error::TapeMismatch(format!(
            "{} tape entries for {} layers",
            tape.entries.len(),
            model.layers.len()
        )));
    }
    let mut grads = Gradients::default();
    let mut outputs = keep_outputs.then(|| vec![Tensor4::zeros([0, 0, 0, 0]); model.layers.len()]);
    let mut g = loss_grad.clone();
    for (i, (layer, entry)) in model.layers.iter().zip(&tape.entries).enumerate().rev() {
        match (&entry.denoiser, model.attachments.get(&i)) {
            (Some(trace), Some(params)) => {
                let want = params.parts().iter().any(|(_, l)| l.trainable);
                let (gx, pg) = denoiser_backward(trace, params, &g, want)?;
                if let Some(pg) = pg {
                    for ((part, grad), (_, l)) in pg.parts.into_iter().zip(params.parts()) {
                        if l.trainable {
                            insert_param_grad(&mut grads, grad, |f| denoiser_param_name(i, part, f));
                        }
                    }
                }
                g = gx;
            }
            (None, None) => {}
            _ => {
                return Err(Error::TapeMismatch(format!(
                    "denoiser presence differs at layer {i}"
                )))
            }
        }
        if let Some(out) = outputs.as_mut() {
            out[i] = g.clone();
        }
        let need_input = i > 0 || keep_outputs;
        if !need_input && !layer.trainable {
            break;
        }
        let (gx, pg) = layer_backward(&entry.input, layer, &g, layer.trainable)?;
        if let Some(pg) = pg {
            insert_param_grad(&mut grads, pg, |f| layer_param_name(i, f));
        }
        g = gx;
    }
    grads.outputs = outputs;
    Ok(grads)
}

fn insert_param_grad(grads: &mut Gradients, pg: ParamGrad, name: impl Fn(&str) -> String) {
    grads.params.insert(name("weight"), pg.weight.into_vec());
    if let Some(b) = pg.bias {
        grads.params.insert(name("bias"), b);
    }
}

/// Fraction of correct argmax predictions.
pub fn accuracy(logits: &Tensor4, labels: &[usize]) -> f64 {
    let classes = logits.c();
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| argmax(&logits.data()[i * classes..(i + 1) * classes]) == label)
        .count();
    correct as f64 / labels.len().max(1) as f64
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
