//! Subcommands. Each one reads its inputs, runs a pipeline step and writes
//! files whose first lines record the master seed.

use std::path::{Path, PathBuf};

use anoise::container::{load_model, save_model_seeded, save_optimizer};
use anoise::graph::{attach, ModelGraph};
use anoise::placement::PlacementPlan;
use anoise_hw::report::{model_shapes, parse_shape_table, simulate};
use anoise_hw::Unc;
use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{eval_csv, header, metrics_csv, read_file, read_text, write_file};
use crate::pipeline;

#[derive(Debug, Parser)]
#[command(
    name = "anoise",
    version,
    about = "Activation-noise experiments and denoiser hardware reports"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON experiment config; defaults apply to missing keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's output directory
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a CIFAR-10 directory, or write the synthetic set in CIFAR-10 binary layout
    PrepData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the reference CNN on clean activations
    TrainBackbone {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        /// Checkpoint path (default: <out-dir>/backbone.anmd)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Clean, noisy and denoised accuracy over noise seeds
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Noise σ in percent of feature magnitude; repeat or comma-separate to sweep
        #[arg(long = "noise-sigma-pct", value_delimiter = ',')]
        sigma_pct: Vec<f64>,
        #[arg(long)]
        seeds: Option<usize>,
        /// CSV path (default: <out-dir>/eval.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank layers by output-gradient norm and choose denoiser sites under a budget
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Parameter budget in percent of the backbone
        #[arg(long)]
        eta: Option<f64>,
        /// Plan path (default: <out-dir>/plan.txt)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attach blocks per a plan and train them with the backbone frozen
    TrainDenoiser {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Training noise σ (default: the config's noise.sigma_pct)
        #[arg(long = "noise-sigma-pct")]
        sigma_pct: Option<f64>,
        /// Checkpoint path (default: <out-dir>/denoised.anmd)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer cycle counts with and without denoisers
    HwSim {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint; its attached blocks are simulated
        #[arg(long, conflicts_with = "shapes", required_unless_present = "shapes")]
        model: Option<PathBuf>,
        /// Layer-shape table instead of a model
        #[arg(long)]
        shapes: Option<PathBuf>,
        /// Attach blocks per this plan instead of the model's own
        #[arg(long, requires = "model")]
        plan: Option<PathBuf>,
        #[arg(long)]
        cores: Option<usize>,
        #[arg(long)]
        head_parallel: bool,
        /// Also write the UNC lookup tables as hex
        #[arg(long)]
        dump_luts: bool,
    },
    /// Render tables from the files in an output directory
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// σ whose mean row fills the per-model table
        #[arg(long, default_value_t = 6.0)]
        table1_sigma: f64,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_model(path: &Path) -> Result<ModelGraph> {
    load_model(&read_file(path, "model")?)
        .map_err(|e| CliError::Runtime(format!("model {}: {e}", path.display())))
}

fn read_plan(path: &Path) -> Result<PlacementPlan> {
    PlacementPlan::from_text(&read_text(path, "plan")?)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("adam")
}

fn progress(stage: &str) -> impl FnMut(&anoise::train::EpochStats) + '_ {
    move |s| {
        eprintln!(
            "{stage} epoch {}: loss {:.4} train acc {:.2}%",
            s.epoch + 1,
            s.loss,
            s.accuracy * 100.0
        )
    }
}

/// Runs one command; the returned text goes to stdout.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::PrepData { common } => prep_data(&load_config(&common)?),
        Command::TrainBackbone {
            common,
            epochs,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(e) = epochs {
                cfg.backbone_training.epochs = e;
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.join("backbone.anmd"));
            let data = pipeline::load_data(&cfg)?;
            let (model, state, history) =
                pipeline::train_backbone_model(&cfg, &data, progress("backbone"))?;
            write_file(&out, save_model_seeded(&model, cfg.seed))?;
            write_file(&sidecar(&out), save_optimizer(&state))?;
            let metrics = out.with_extension("metrics.csv");
            let head = header(cfg.seed, "train-backbone", &[("dataset", data.name.into())]);
            write_file(&metrics, head + &metrics_csv(&history))?;
            Ok(format!("wrote {} and {}", out.display(), metrics.display()))
        }
        Command::Eval {
            common,
            model,
            sigma_pct,
            seeds,
            out,
        } => {
            let cfg = load_config(&common)?;
            let m = read_model(&model)?;
            let sigmas = if sigma_pct.is_empty() {
                cfg.sigmas()
            } else {
                sigma_pct
            };
            if let Some(bad) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
                return Err(CliError::Config(format!(
                    "noise σ must be non-negative, got {bad}"
                )));
            }
            let seeds = seeds.unwrap_or(cfg.eval.seeds);
            if seeds == 0 {
                return Err(CliError::Config("--seeds must be at least 1".into()));
            }
            let data = pipeline::load_data(&cfg)?;
            let rows = pipeline::eval_rows(&cfg, &m, &data.test, &sigmas, seeds)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("eval.csv"));
            let head = header(cfg.seed, "eval", &[("seeds", seeds.to_string())]);
            let body = eval_csv(data.name, &m.name, &rows, pipeline::param_overhead_pct(&m));
            write_file(&out, head + &body)?;
            Ok(body)
        }
        Command::Plan {
            common,
            model,
            eta,
            out,
        } => {
            let cfg = load_config(&common)?;
            let eta = eta.unwrap_or(cfg.placement.eta_pct);
            let m = read_model(&model)?;
            let data = pipeline::load_data(&cfg)?;
            let plan = pipeline::make_plan(&cfg, &m, &data, eta)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("plan.txt"));
            let text = plan.to_text(cfg.seed);
            write_file(&out, &text)?;
            Ok(text)
        }
        Command::TrainDenoiser {
            common,
            model,
            plan,
            epochs,
            sigma_pct,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(e) = epochs {
                cfg.denoiser_training.epochs = e;
            }
            let m = read_model(&model)?;
            let p = read_plan(&plan)?;
            pipeline::check_plan(&p, &m)?;
            let sigma = sigma_pct.unwrap_or(cfg.noise.sigma_pct);
            let data = pipeline::load_data(&cfg)?;
            let (trained, state, history) =
                pipeline::train_denoiser_model(&cfg, &m, &p, &data, sigma, progress("denoiser"))?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("denoised.anmd"));
            write_file(&out, save_model_seeded(&trained, cfg.seed))?;
            write_file(&sidecar(&out), save_optimizer(&state))?;
            let metrics = out.with_extension("metrics.csv");
            let head = header(
                cfg.seed,
                "train-denoiser",
                &[("sigma_pct", sigma.to_string())],
            );
            write_file(&metrics, head + &metrics_csv(&history))?;
            Ok(format!(
                "wrote {} ({} denoiser parameters, {:.3}% of backbone)",
                out.display(),
                trained.denoiser_param_count(),
                pipeline::param_overhead_pct(&trained)
            ))
        }
        Command::HwSim {
            common,
            model,
            shapes,
            plan,
            cores,
            head_parallel,
            dump_luts,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(c) = cores {
                cfg.hw.num_conv_cores = c;
            }
            cfg.hw.head_parallel |= head_parallel;
            cfg.hw.validate()?;
            let (source, (layers, blocks)) = match (model, shapes) {
                (Some(path), _) => {
                    let mut m = read_model(&path)?;
                    if let Some(plan_path) = plan {
                        let p = read_plan(&plan_path)?;
                        m = m.without_attachments();
                        attach(&mut m, &p.attachments(), 0)?;
                    }
                    (path, model_shapes(&m)?)
                }
                (None, Some(path)) => {
                    let text = read_text(&path, "shape table")?;
                    (path, parse_shape_table(&text)?)
                }
                (None, None) => return Err(CliError::Config("pass --model or --shapes".into())),
            };
            let report = simulate(&layers, &blocks, &cfg.hw)?;
            let head = header(
                cfg.seed,
                "hw-sim",
                &[
                    ("source", source.display().to_string()),
                    ("conv_cores", cfg.hw.num_conv_cores.to_string()),
                    ("cancel_lanes", cfg.hw.num_cancel_lanes.to_string()),
                    ("head_parallel", cfg.hw.head_parallel.to_string()),
                ],
            ) + &report.summary_lines(cfg.hw.clock_mhz);
            let dir = &cfg.output_dir;
            write_file(
                &dir.join("cycles_trace.csv"),
                head.clone() + &report.trace_csv(),
            )?;
            write_file(
                &dir.join("cycles_layers.csv"),
                head.clone() + &report.layers_csv(),
            )?;
            if dump_luts {
                let (radius, cosine) = Unc::new(cfg.hw.lut_bits, cfg.hw.qformat())?.dump_hex();
                write_file(&dir.join("lut_radius.hex"), radius)?;
                write_file(&dir.join("lut_cosine.hex"), cosine)?;
            }
            Ok(head + &report.layers_csv())
        }
        Command::Report { dir, table1_sigma } => crate::report::render(&dir, table1_sigma),
    }
}

fn prep_data(cfg: &ExperimentConfig) -> Result<String> {
    match cfg.dataset.kind {
        crate::config::DatasetKind::Cifar10 => {
            let data = pipeline::load_data(cfg)?;
            Ok(format!(
                "CIFAR-10 ok: {} training and {} test records",
                data.train.len(),
                data.test.len()
            ))
        }
        crate::config::DatasetKind::Synthetic => {
            let data = pipeline::load_data(cfg)?;
            let dir = cfg.output_dir.join("synthetic-cifar");
            let n = data.train.len();
            for b in 0..5 {
                let idx: Vec<usize> = (b * n / 5..(b + 1) * n / 5).collect();
                let part = data.train.subset(&idx);
                write_file(
                    &dir.join(format!("data_batch_{}.bin", b + 1)),
                    part.to_cifar_bytes()?,
                )?;
            }
            write_file(&dir.join("test_batch.bin"), data.test.to_cifar_bytes()?)?;
            Ok(format!(
                "wrote {} training and {} test records to {}",
                n,
                data.test.len(),
                dir.display()
            ))
        }
    }
}
