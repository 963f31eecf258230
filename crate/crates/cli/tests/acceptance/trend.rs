//! Criteria 7 and 8: the full pipeline on CIFAR-10 at default settings
//! (5 backbone epochs, σ = 6 % on every conv, η = 4 %, 5 denoiser epochs,
//! 5 noise seeds). Both report blocked when the binary files are absent.

use anoise::graph::ModelGraph;
use anoise::placement::PlacementPlan;
use anoise_cli::config::{DatasetKind, ExperimentConfig};
use anoise_cli::pipeline::{self, cifar_dir, Data, EvalRow};

use crate::{Check, Failure};

const SEEDS: usize = 5;
const SWEEP: [f64; 4] = [2.0, 4.0, 6.0, 8.0];

/// Models trained by criterion 7 and reused by criterion 8.
#[derive(Default)]
pub struct Shared {
    trained: Option<Trained>,
}

struct Trained {
    cfg: ExperimentConfig,
    data: Data,
    backbone: ModelGraph,
    plan: PlacementPlan,
    denoised_at_6: ModelGraph,
}

fn config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.kind = DatasetKind::Cifar10;
    cfg
}

fn load(cfg: &ExperimentConfig) -> Result<Data, Failure> {
    let Some(dir) = cifar_dir(cfg) else {
        return Err(Failure::Blocked(
            "dataset not found: set ANOISE_CIFAR10_DIR to the CIFAR-10 binary directory".into(),
        ));
    };
    let (train, test) = anoise::data::cifar10_files(&dir);
    if let Some(missing) = train.iter().chain([&test]).find(|p| !p.exists()) {
        return Err(Failure::Blocked(format!("dataset not found: {} is missing", missing.display())));
    }
    Ok(pipeline::load_data(cfg)?)
}

fn progress(stage: &'static str) -> impl FnMut(&anoise::train::EpochStats) {
    move |s| eprintln!("  {stage} epoch {}: loss {:.4}, train acc {:.2}%", s.epoch + 1, s.loss, s.accuracy * 100.0)
}

fn train(shared: &mut Shared) -> Result<&Trained, Failure> {
    if shared.trained.is_none() {
        let cfg = config();
        let data = load(&cfg)?;
        let (backbone, _, _) = pipeline::train_backbone_model(&cfg, &data, progress("backbone"))?;
        let plan = pipeline::make_plan(&cfg, &backbone, &data, cfg.placement.eta_pct)?;
        let (denoised_at_6, _, _) =
            pipeline::train_denoiser_model(&cfg, &backbone, &plan, &data, cfg.noise.sigma_pct, progress("denoiser"))?;
        shared.trained = Some(Trained { cfg, data, backbone, plan, denoised_at_6 });
    }
    Ok(shared.trained.as_ref().expect("just trained"))
}

struct Means {
    baseline: f64,
    noisy: f64,
    denoised: f64,
}

fn means(rows: &[EvalRow]) -> Means {
    let pick = |f: fn(&EvalRow) -> f64| pipeline::mean_std(&rows.iter().map(f).collect::<Vec<_>>()).0;
    Means {
        baseline: pick(|r| r.baseline),
        noisy: pick(|r| r.noisy),
        denoised: pick(|r| r.denoised.unwrap_or(f64::NAN)),
    }
}

pub fn end_to_end(shared: &mut Shared) -> Check {
    let t = train(shared)?;
    let sigma = t.cfg.noise.sigma_pct;
    let m = means(&pipeline::eval_rows(&t.cfg, &t.denoised_at_6, &t.data.test, &[sigma], SEEDS)?);
    let overhead = pipeline::param_overhead_pct(&t.denoised_at_6);
    let drop = m.baseline - m.noisy;
    let recovered = (m.denoised - m.noisy) / drop;
    let summary = format!(
        "baseline {:.2}%, noisy {:.2}%, denoised {:.2}% (mean of {SEEDS} seeds at sigma {sigma}%), recovery {:.0}%, overhead {overhead:.2}% with layers {:?}",
        m.baseline,
        m.noisy,
        m.denoised,
        recovered * 100.0,
        t.plan.entries.iter().map(|e| e.layer_index).collect::<Vec<_>>()
    );
    ensure!(m.baseline >= 55.0, "{summary}: baseline below 55%");
    ensure!(drop >= 3.0, "{summary}: noise drops accuracy by only {drop:.2} points");
    ensure!(recovered >= 0.5, "{summary}: less than half the drop recovered");
    ensure!(m.baseline - m.denoised <= 2.0, "{summary}: denoised more than 2 points below baseline");
    ensure!(overhead <= 4.0, "{summary}: overhead above 4%");
    Ok(summary)
}

pub fn sweep(shared: &mut Shared) -> Check {
    let t = train(shared)?;
    let mut noisy = Vec::new();
    let mut lines = Vec::new();
    for sigma in SWEEP {
        let model = if sigma == t.cfg.noise.sigma_pct {
            t.denoised_at_6.clone()
        } else {
            let progress = progress("sweep denoiser");
            pipeline::train_denoiser_model(&t.cfg, &t.backbone, &t.plan, &t.data, sigma, progress)?.0
        };
        let m = means(&pipeline::eval_rows(&t.cfg, &model, &t.data.test, &[sigma], SEEDS)?);
        lines.push(format!("sigma {sigma}: noisy {:.2}% denoised {:.2}%", m.noisy, m.denoised));
        ensure!(
            m.denoised > m.noisy,
            "{}: denoised does not beat noisy at sigma {sigma}",
            lines.join(", ")
        );
        noisy.push(m.noisy);
    }
    let summary = lines.join(", ");
    ensure!(noisy[3] <= noisy[0], "{summary}: noisy accuracy at 8% above that at 2%");
    Ok(summary)
}
