//! Output files: `#` header lines first, then CSV.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, Result};
use crate::pipeline::{mean_std, EvalRow};

pub const EVAL_COLUMNS: &str =
    "dataset,architecture,row,seed,sigma_pct,baseline_acc,noisy_acc,denoised_acc,param_overhead_pct";

/// `# seed=…` and `# command=…` followed by any extra `key=value` pairs.
pub fn header(seed: u64, command: &str, extra: &[(&str, String)]) -> String {
    let mut s = format!("# seed={seed}\n# command={command}\n");
    for (k, v) in extra {
        let _ = writeln!(s, "# {k}={v}");
    }
    s
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn read_file(path: &Path, what: &str) -> Result<Vec<u8>> {
    std::fs::read(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {what} {}: {e}", path.display())))
}

pub fn read_text(path: &Path, what: &str) -> Result<String> {
    String::from_utf8(read_file(path, what)?)
        .map_err(|_| CliError::Runtime(format!("{what} {} is not UTF-8 text", path.display())))
}

pub fn metrics_csv(history: &[anoise::train::EpochStats]) -> String {
    let mut s = String::from("epoch,loss,train_acc\n");
    for h in history {
        let _ = writeln!(s, "{},{},{}", h.epoch + 1, h.loss, h.accuracy * 100.0);
    }
    s
}

/// Per-seed rows, then `mean` and `std` rows for each σ.
pub fn eval_csv(dataset: &str, architecture: &str, rows: &[EvalRow], overhead_pct: f64) -> String {
    let mut s = format!("{EVAL_COLUMNS}\n");
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut sigmas: Vec<f64> = Vec::new();
    for r in rows {
        if !sigmas.contains(&r.sigma_pct) {
            sigmas.push(r.sigma_pct);
        }
    }
    for sigma in sigmas {
        let group: Vec<&EvalRow> = rows.iter().filter(|r| r.sigma_pct == sigma).collect();
        for r in &group {
            let _ = writeln!(
                s,
                "{dataset},{architecture},seed,{},{},{},{},{},{overhead_pct}",
                r.seed,
                r.sigma_pct,
                r.baseline,
                r.noisy,
                opt(r.denoised)
            );
        }
        let col = |f: &dyn Fn(&EvalRow) -> Option<f64>| -> Option<(f64, f64)> {
            let v: Option<Vec<f64>> = group.iter().map(|r| f(r)).collect();
            v.map(|v| mean_std(&v))
        };
        let base = col(&|r| Some(r.baseline));
        let noisy = col(&|r| Some(r.noisy));
        let den = col(&|r| r.denoised);
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            let get = |v: Option<(f64, f64)>| v.map(|(m, sd)| if pick == 0 { m } else { sd });
            let _ = writeln!(
                s,
                "{dataset},{architecture},{label},,{sigma},{},{},{},{overhead_pct}",
                opt(get(base)),
                opt(get(noisy)),
                opt(get(den))
            );
        }
    }
    s
}

/// Non-comment lines of a CSV file split on commas, header row first.
pub fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split(',').map(|f| f.trim().to_string()).collect())
        .collect()
}

/// `# key=value` header values of a file.
pub fn comment_value(text: &str, key: &str) -> Option<String> {
    text.lines()
        .filter_map(|l| l.strip_prefix('#'))
        .filter_map(|l| l.trim().split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim().to_string())
}
