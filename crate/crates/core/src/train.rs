//! Training loops: clean backbone training and frozen-backbone denoiser
//! training under active noise.

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{accuracy, backward, forward, predict, ModelGraph, Mode, Sampling};
use crate::loss::cross_entropy;
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{derive_seed, purpose, stream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
}

fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    derive_seed(seed, &[purpose::BATCH, epoch as u64, batch as u64])
}

/// Runs `epochs` passes of shuffled minibatch Adam over whatever parameters
/// of `model` are trainable.
pub fn fit(
    model: &mut ModelGraph,
    data: &Dataset,
    mode: Mode,
    cfg: &TrainConfig,
    state: &mut AdamState,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if data.is_empty() && cfg.epochs > 0 {
        return Err(Error::Empty("training set"));
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream(cfg.seed, &[purpose::SHUFFLE, epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0.0);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.images.gather(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let ids: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
            let seed = batch_seed(cfg.seed, epoch, b);
            let (logits, tape) = forward(model, &x, mode, Sampling::SeededIds(seed, &ids))?;
            let (loss, grad) = cross_entropy(&logits, &labels)?;
            let grads = backward(model, &tape, &grad, false)?;
            state.step(model, &grads)?;
            loss_sum += loss * idx.len() as f64;
            correct += accuracy(&logits, &labels) * idx.len() as f64;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct / data.len() as f64,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// Trains every backbone layer on clean activations.
pub fn train_backbone(
    model: &mut ModelGraph,
    data: &Dataset,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(AdamState, Vec<EpochStats>)> {
    for layer in &mut model.layers {
        layer.trainable = layer.kind.has_params();
    }
    let mut state = AdamState::new(cfg.adam);
    let history = fit(model, data, Mode::Clean, cfg, &mut state, on_epoch)?;
    Ok((state, history))
}

/// Trains only the attached denoisers, backbone frozen, with the model's
/// noise spec active. Fresh noise and ε are drawn on every forward pass.
pub fn train_denoisers(
    model: &mut ModelGraph,
    data: &Dataset,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(AdamState, Vec<EpochStats>)> {
    if model.attachments.is_empty() {
        return Err(Error::Config(
            "model has no denoiser attachments to train".into(),
        ));
    }
    model.freeze_backbone();
    for d in model.attachments.values_mut() {
        for (_, l) in d.parts_mut() {
            l.trainable = true;
        }
    }
    let mut state = AdamState::new(cfg.adam);
    let history = fit(model, data, Mode::Noisy, cfg, &mut state, on_epoch)?;
    Ok((state, history))
}

/// Mean loss and accuracy over a dataset. Noise streams are keyed by `seed`
/// and the dataset index of each sample, so results do not depend on the
/// batch size.
pub fn evaluate(
    model: &ModelGraph,
    data: &Dataset,
    mode: Mode,
    seed: u64,
    batch_size: usize,
) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let batch_size = batch_size.max(1);
    let (mut loss_sum, mut correct) = (0.0, 0.0);
    let order: Vec<usize> = (0..data.len()).collect();
    for idx in order.chunks(batch_size) {
        let x = data.images.gather(idx);
        let labels = &data.labels[idx[0]..idx[0] + idx.len()];
        let ids: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
        let logits = predict(model, &x, mode, Sampling::SeededIds(seed, &ids))?;
        let (loss, _) = cross_entropy(&logits, labels)?;
        loss_sum += loss * idx.len() as f64;
        correct += accuracy(&logits, labels) * idx.len() as f64;
    }
    Ok(EvalResult {
        loss: loss_sum / data.len() as f64,
        accuracy: correct / data.len() as f64,
    })
}
