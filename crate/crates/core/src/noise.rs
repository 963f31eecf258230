//! Additive Gaussian activation noise standing in for analog MVM error.
//!
//! The noise standard deviation is a percentage of the feature-map magnitude,
//! defined here as the per-sample mean absolute activation. It is recomputed
//! from the clean activation on every forward pass.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{purpose, stream};
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// σ = sigma_pct/100 · mean|x| of the sample, recomputed each pass.
    #[default]
    Relative,
    /// σ = sigma_pct/100, independent of the signal (ablation only).
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseEntry {
    pub layer_index: usize,
    pub sigma_pct: f64,
    #[serde(default)]
    pub mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub entries: Vec<NoiseEntry>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sigma_mode: SigmaMode,
}

impl NoiseSpec {
    /// The same σ on every listed layer.
    pub fn uniform(layers: impl IntoIterator<Item = usize>, sigma_pct: f64, seed: u64) -> Self {
        Self {
            entries: layers
                .into_iter()
                .map(|layer_index| NoiseEntry {
                    layer_index,
                    sigma_pct,
                    mean: 0.0,
                })
                .collect(),
            seed,
            sigma_mode: SigmaMode::Relative,
        }
    }

    pub fn entry(&self, layer_index: usize) -> Option<&NoiseEntry> {
        self.entries.iter().find(|e| e.layer_index == layer_index)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !e.sigma_pct.is_finite() || e.sigma_pct < 0.0 {
                return Err(Error::Config(format!(
                    "layer {}: sigma_pct must be finite and non-negative, got {}",
                    e.layer_index, e.sigma_pct
                )));
            }
            if !e.mean.is_finite() {
                return Err(Error::Config(format!(
                    "layer {}: noise mean must be finite",
                    e.layer_index
                )));
            }
        }
        Ok(())
    }
}

/// Mean absolute value over one sample's feature map.
pub fn sample_magnitude(sample: &[f64]) -> f64 {
    sample.iter().map(|v| v.abs()).sum::<f64>() / sample.len() as f64
}

/// Per-sample feature magnitudes of a batch.
pub fn feature_magnitude(x: &Tensor4) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Empty("feature map"));
    }
    Ok((0..x.n()).map(|i| sample_magnitude(x.sample(i))).collect())
}

/// Draws the additive noise tensor `z` for one layer output.
///
/// Streams are keyed by `(seed, layer, sample)`, so the result does not depend
/// on batch composition order.
pub fn draw_noise(
    x: &Tensor4,
    entry: &NoiseEntry,
    mode: SigmaMode,
    seed: u64,
    layer: usize,
    sample_ids: &[u64],
) -> Result<Tensor4> {
    let mags = feature_magnitude(x)?;
    let mut z = Tensor4::zeros(x.shape());
    if entry.sigma_pct == 0.0 && entry.mean == 0.0 {
        return Ok(z);
    }
    for (i, &mag) in mags.iter().enumerate() {
        let sigma = match mode {
            SigmaMode::Relative => entry.sigma_pct / 100.0 * mag,
            SigmaMode::Constant => entry.sigma_pct / 100.0,
        };
        let mut rng = stream(seed, &[purpose::INJECT, layer as u64, sample_ids[i]]);
        for v in z.sample_mut(i) {
            let n: f64 = rng.sample(StandardNormal);
            *v = entry.mean + sigma * n;
        }
    }
    Ok(z)
}

/// `y = x + z`. A zero-σ, zero-mean entry leaves `x` bitwise untouched.
pub fn inject(
    x: &Tensor4,
    entry: &NoiseEntry,
    mode: SigmaMode,
    seed: u64,
    layer: usize,
    sample_ids: &[u64],
) -> Result<(Tensor4, Tensor4)> {
    let z = draw_noise(x, entry, mode, seed, layer, sample_ids)?;
    Ok((add_noise(x, &z, entry)?, z))
}

pub(crate) fn add_noise(x: &Tensor4, z: &Tensor4, entry: &NoiseEntry) -> Result<Tensor4> {
    if entry.sigma_pct == 0.0 && entry.mean == 0.0 {
        x.expect_same_shape(z, "noise injection")?;
        return Ok(x.clone());
    }
    x.add(z)
}
