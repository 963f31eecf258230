//! The experiment steps shared by the commands and the acceptance suite.

use std::path::{Path, PathBuf};

use anoise::data::{
    cifar10_files, gen_synthetic, load_cifar10, Dataset, CIFAR_CLASSES, CIFAR_SIDE,
};
use anoise::graph::{apply_noise_spec, attach, Mode, ModelGraph};
use anoise::noise::{NoiseEntry, NoiseSpec};
use anoise::optim::AdamState;
use anoise::placement::{plan_for_model, PlacementPlan};
use anoise::rng::{derive_seed, purpose};
use anoise::train::{evaluate, train_backbone, train_denoisers, EpochStats};

use crate::config::{DatasetKind, ExperimentConfig, CIFAR_ENV};
use crate::error::{CliError, Result};

pub struct Data {
    pub name: &'static str,
    pub train: Dataset,
    pub test: Dataset,
}

/// CIFAR directory from the environment, then the config.
pub fn cifar_dir(cfg: &ExperimentConfig) -> Option<PathBuf> {
    std::env::var_os(CIFAR_ENV)
        .map(PathBuf::from)
        .or_else(|| cfg.dataset.dir.clone())
}

fn missing_cifar(dir: Option<&Path>) -> CliError {
    let where_ = match dir {
        Some(d) => format!("in {}", d.display()),
        None => "(no directory configured)".to_string(),
    };
    CliError::Runtime(format!(
        "CIFAR-10 binary files not found {where_}; download the binary version of \
         CIFAR-10, unpack it, and point dataset.dir or {CIFAR_ENV} at the directory \
         holding data_batch_1.bin .. data_batch_5.bin and test_batch.bin"
    ))
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    let d = &cfg.dataset;
    let (name, train, test) = match d.kind {
        DatasetKind::Synthetic => {
            let all = gen_synthetic(
                derive_seed(cfg.seed, &[purpose::DATA]),
                d.synthetic_train + d.synthetic_test,
                d.synthetic_classes,
                CIFAR_SIDE,
            )?;
            let (train, test) = all.split_at(d.synthetic_train);
            ("synthetic", train, test)
        }
        DatasetKind::Cifar10 => {
            let dir = cifar_dir(cfg).ok_or_else(|| missing_cifar(None))?;
            let (train_files, test_file) = cifar10_files(&dir);
            if !test_file.exists() || train_files.iter().any(|p| !p.exists()) {
                return Err(missing_cifar(Some(&dir)));
            }
            (
                "cifar10",
                load_cifar10(&train_files)?,
                load_cifar10(&[test_file])?,
            )
        }
    };
    let limit = |ds: Dataset, n: Option<usize>| match n {
        Some(n) if n < ds.len() => ds.split_at(n).0,
        _ => ds,
    };
    Ok(Data {
        name,
        train: limit(train, d.train_limit),
        test: limit(test, d.test_limit),
    })
}

pub fn classes(cfg: &ExperimentConfig) -> usize {
    match cfg.dataset.kind {
        DatasetKind::Synthetic => cfg.dataset.synthetic_classes,
        DatasetKind::Cifar10 => CIFAR_CLASSES,
    }
}

/// The configured noise on the configured layers (every convolution by
/// default) at `sigma_pct`.
pub fn noise_spec(cfg: &ExperimentConfig, model: &ModelGraph, sigma_pct: f64) -> NoiseSpec {
    let layers = cfg
        .noise
        .layers
        .clone()
        .unwrap_or_else(|| model.conv_layers());
    NoiseSpec {
        entries: layers
            .into_iter()
            .map(|layer_index| NoiseEntry {
                layer_index,
                sigma_pct,
                mean: cfg.noise.mean,
            })
            .collect(),
        seed: cfg.seed,
        sigma_mode: cfg.noise.sigma_mode,
    }
}

pub fn train_backbone_model(
    cfg: &ExperimentConfig,
    data: &Data,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(ModelGraph, AdamState, Vec<EpochStats>)> {
    let mut model =
        ModelGraph::small_cnn(data.train.classes, derive_seed(cfg.seed, &[purpose::INIT]));
    let tc = cfg.backbone_training.to_train_config(cfg.seed);
    let (state, history) = train_backbone(&mut model, &data.train, &tc, on_epoch)?;
    Ok((model, state, history))
}

/// Scores on the first `calib_samples` training images and selects layers.
pub fn make_plan(
    cfg: &ExperimentConfig,
    model: &ModelGraph,
    data: &Data,
    eta_pct: f64,
) -> Result<PlacementPlan> {
    let n = cfg.placement.calib_samples.min(data.train.len());
    let calib = data.train.split_at(n).0;
    Ok(plan_for_model(
        model,
        &calib.images,
        &calib.labels,
        eta_pct,
        cfg.placement.ratio,
        cfg.placement.mode,
    )?)
}

/// Checks that `plan` was made for `model` before acting on it.
pub fn check_plan(plan: &PlacementPlan, model: &ModelGraph) -> Result<()> {
    if plan.backbone_params != model.backbone_param_count() {
        return Err(CliError::Runtime(format!(
            "stale plan: made for a backbone with {} parameters, model has {}",
            plan.backbone_params,
            model.backbone_param_count()
        )));
    }
    let map = anoise::placement::channel_map(model)?;
    for e in &plan.entries {
        if map.get(&e.layer_index) != Some(&e.channels) {
            return Err(CliError::Runtime(format!(
                "stale plan: layer {} with {} channels is not an attachment point of this model",
                e.layer_index, e.channels
            )));
        }
    }
    if plan.entries.is_empty() {
        return Err(CliError::Config(format!(
            "plan selects no layers (budget {} parameters at eta {}%); nothing to train",
            plan.budget, plan.eta_pct
        )));
    }
    Ok(())
}

/// Attaches fresh blocks per `plan`, turns on the configured noise and
/// trains the blocks with the backbone frozen.
pub fn train_denoiser_model(
    cfg: &ExperimentConfig,
    backbone: &ModelGraph,
    plan: &PlacementPlan,
    data: &Data,
    sigma_pct: f64,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(ModelGraph, AdamState, Vec<EpochStats>)> {
    check_plan(plan, backbone)?;
    let mut model = backbone.without_attachments();
    let spec = noise_spec(cfg, &model, sigma_pct);
    apply_noise_spec(&mut model, &spec)?;
    attach(
        &mut model,
        &plan.attachments(),
        derive_seed(cfg.seed, &[purpose::ATTACH]),
    )?;
    let tc = cfg
        .denoiser_training
        .to_train_config(derive_seed(cfg.seed, &[purpose::BATCH, 1]));
    let (state, history) = train_denoisers(&mut model, &data.train, &tc, on_epoch)?;
    Ok((model, state, history))
}

pub fn eval_seed(master: u64, k: usize) -> u64 {
    derive_seed(master, &[purpose::EVAL, k as u64])
}

/// One evaluation row; accuracies in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub seed: u64,
    pub sigma_pct: f64,
    pub baseline: f64,
    pub noisy: f64,
    pub denoised: Option<f64>,
}

/// Clean accuracy of the backbone, then noisy (backbone alone) and
/// denoised (with blocks) accuracy per σ and noise seed.
pub fn eval_rows(
    cfg: &ExperimentConfig,
    model: &ModelGraph,
    test: &Dataset,
    sigmas: &[f64],
    seeds: usize,
) -> Result<Vec<EvalRow>> {
    let batch = cfg.eval.batch_size;
    let backbone = model.without_attachments();
    let baseline = evaluate(&backbone, test, Mode::Clean, 0, batch)?.accuracy * 100.0;
    let mut rows = Vec::new();
    for &sigma in sigmas {
        let mut noisy_model = backbone.clone();
        let spec = noise_spec(cfg, &noisy_model, sigma);
        apply_noise_spec(&mut noisy_model, &spec)?;
        let denoised_model = if model.attachments.is_empty() {
            None
        } else {
            let mut m = model.clone();
            let spec = noise_spec(cfg, &m, sigma);
            apply_noise_spec(&mut m, &spec)?;
            Some(m)
        };
        for k in 0..seeds {
            let seed = eval_seed(cfg.seed, k);
            let noisy = evaluate(&noisy_model, test, Mode::Noisy, seed, batch)?.accuracy * 100.0;
            let denoised = match &denoised_model {
                Some(m) => Some(evaluate(m, test, Mode::Noisy, seed, batch)?.accuracy * 100.0),
                None => None,
            };
            rows.push(EvalRow {
                seed,
                sigma_pct: sigma,
                baseline,
                noisy,
                denoised,
            });
        }
    }
    Ok(rows)
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn param_overhead_pct(model: &ModelGraph) -> f64 {
    let base = model.backbone_param_count();
    if base == 0 {
        return 0.0;
    }
    model.denoiser_param_count() as f64 / base as f64 * 100.0
}
