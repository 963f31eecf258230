//! Experiment configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use anoise::noise::SigmaMode;
use anoise::optim::AdamConfig;
use anoise::placement::SelectionMode;
use anoise::train::TrainConfig;
use anoise_hw::HwConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable naming a CIFAR-10 binary directory; it overrides
/// `dataset.dir`.
pub const CIFAR_ENV: &str = "ANOISE_CIFAR10_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stream is derived from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub noise: NoiseConfig,
    pub placement: PlacementConfig,
    pub backbone_training: TrainingConfig,
    pub denoiser_training: TrainingConfig,
    pub eval: EvalConfig,
    pub hw: HwConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            noise: NoiseConfig::default(),
            placement: PlacementConfig::default(),
            backbone_training: TrainingConfig::default(),
            denoiser_training: TrainingConfig::default(),
            eval: EvalConfig::default(),
            hw: HwConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Cifar10,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Directory holding `data_batch_{1..5}.bin` and `test_batch.bin`.
    pub dir: Option<PathBuf>,
    /// Use only the first `n` training / test records.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub synthetic_classes: usize,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Cifar10,
            dir: None,
            train_limit: None,
            test_limit: None,
            synthetic_classes: 10,
            synthetic_train: 2000,
            synthetic_test: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma_pct: f64,
    pub mean: f64,
    pub sigma_mode: SigmaMode,
    /// Noisy layers; every convolution when absent.
    pub layers: Option<Vec<usize>>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_pct: 6.0,
            mean: 0.0,
            sigma_mode: SigmaMode::Relative,
            layers: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementConfig {
    pub eta_pct: f64,
    pub ratio: f64,
    pub mode: SelectionMode,
    pub calib_samples: usize,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self {
            eta_pct: anoise::placement::DEFAULT_ETA_PCT,
            ratio: anoise::denoiser::DEFAULT_RATIO,
            mode: SelectionMode::FirstFit,
            calib_samples: anoise::placement::DEFAULT_CALIB_SAMPLES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 5,
            batch_size: 128,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
        }
    }
}

impl TrainingConfig {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of noise seeds per σ.
    pub seeds: usize,
    /// σ values to sweep; `noise.sigma_pct` alone when empty.
    pub sigmas: Vec<f64>,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: 5,
            sigmas: Vec::new(),
            batch_size: 256,
        }
    }
}

fn bad(msg: String) -> CliError {
    CliError::Config(msg)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| bad(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_json(&text).map_err(|e| match e {
                    CliError::Config(m) => bad(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, name: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(bad(format!(
                    "{name} must be a non-negative number, got {v}"
                )))
            }
        };
        nonneg(self.noise.sigma_pct, "noise.sigma_pct")?;
        if !self.noise.mean.is_finite() {
            return Err(bad("noise.mean must be finite".into()));
        }
        nonneg(self.placement.eta_pct, "placement.eta_pct")?;
        if !(self.placement.ratio > 0.0 && self.placement.ratio <= 1.0) {
            return Err(bad(format!(
                "placement.ratio must be in (0, 1], got {}",
                self.placement.ratio
            )));
        }
        if self.placement.calib_samples == 0 {
            return Err(bad("placement.calib_samples must be at least 1".into()));
        }
        for (name, t) in [
            ("backbone_training", &self.backbone_training),
            ("denoiser_training", &self.denoiser_training),
        ] {
            if t.batch_size == 0 {
                return Err(bad(format!("{name}.batch_size must be at least 1")));
            }
            if !(t.lr > 0.0 && t.lr.is_finite()) {
                return Err(bad(format!("{name}.lr must be positive")));
            }
            if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) || !(t.eps > 0.0) {
                return Err(bad(format!(
                    "{name}: betas must be in [0, 1) and eps positive"
                )));
            }
        }
        if self.eval.seeds == 0 || self.eval.batch_size == 0 {
            return Err(bad(
                "eval.seeds and eval.batch_size must be at least 1".into()
            ));
        }
        for &s in &self.eval.sigmas {
            nonneg(s, "eval.sigmas entry")?;
        }
        if self.dataset.kind == DatasetKind::Synthetic
            && (self.dataset.synthetic_classes < 2
                || self.dataset.synthetic_train == 0
                || self.dataset.synthetic_test == 0)
        {
            return Err(bad(
                "synthetic dataset needs at least 2 classes and nonempty splits".into(),
            ));
        }
        self.hw.validate()?;
        Ok(())
    }

    pub fn sigmas(&self) -> Vec<f64> {
        if self.eval.sigmas.is_empty() {
            vec![self.noise.sigma_pct]
        } else {
            self.eval.sigmas.clone()
        }
    }
}
