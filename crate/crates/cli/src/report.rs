//! `report`: lays out fields read from eval, plan and cycle files as text and
//! CSV tables. Every value is copied as written; nothing is recomputed.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};
use crate::output::{comment_value, csv_rows, read_text, write_file, EVAL_COLUMNS};

pub const TABLE1_COLUMNS: &str =
    "dataset,architecture,sigma_pct,baseline_acc,noisy_acc,denoised_acc,param_overhead_pct";
pub const TABLE2_COLUMNS: &str =
    "dataset,architecture,sigma_pct,noisy_mean,noisy_std,denoised_mean,denoised_std";
pub const FIG3_COLUMNS: &str = "layer,kind,baseline_cycles,denoiser_cycles,total_cycles";

const CYCLE_SUMMARY_KEYS: [&str; 5] = [
    "total_without",
    "total_with",
    "overhead_pct",
    "latency_us_without",
    "latency_us_with",
];

struct Input {
    path: PathBuf,
    text: String,
}

fn inputs(dir: &Path, pred: impl Fn(&str) -> bool) -> Result<Vec<Input>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(&pred))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            Ok(Input {
                text: read_text(&path, "report input")?,
                path,
            })
        })
        .collect()
}

/// Fixed-width layout of a header row plus data rows.
fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|f| f.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut s = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, f)| format!("{f:<w$}", w = width[c]))
            .collect();
        let _ = writeln!(s, "{}", line.join("  ").trim_end());
    }
    s
}

fn split(cols: &str) -> Vec<String> {
    cols.split(',').map(String::from).collect()
}

fn to_csv(rows: &[Vec<String>]) -> String {
    rows.iter().map(|r| r.join(",") + "\n").collect()
}

/// Eval rows keyed by column name.
struct EvalTable {
    rows: Vec<Vec<String>>,
}

impl EvalTable {
    fn parse(input: &Input) -> Result<Self> {
        let mut rows = csv_rows(&input.text);
        let expected = split(EVAL_COLUMNS);
        if rows.first() != Some(&expected) {
            return Err(CliError::Runtime(format!(
                "{}: expected columns {EVAL_COLUMNS}",
                input.path.display()
            )));
        }
        rows.remove(0);
        if let Some(bad) = rows.iter().position(|r| r.len() != expected.len()) {
            return Err(CliError::Runtime(format!(
                "{}: data row {} has {} fields, expected {}",
                input.path.display(),
                bad + 1,
                rows[bad].len(),
                expected.len()
            )));
        }
        Ok(Self { rows })
    }

    fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Vec<String>> + 'a {
        self.rows.iter().filter(move |r| r[2] == kind)
    }
}

fn same_sigma(field: &str, sigma: f64) -> bool {
    field.parse::<f64>().is_ok_and(|v| v == sigma)
}

/// Reads the inputs under `dir`, writes `report.txt`, `table1.csv`,
/// `table2.csv` and `fig3.csv` there (each only when it has data) and
/// returns the report text.
pub fn render(dir: &Path, table1_sigma: f64) -> Result<String> {
    let evals = inputs(dir, |n| n.starts_with("eval") && n.ends_with(".csv"))?;
    let plans = inputs(dir, |n| n.starts_with("plan") && n.ends_with(".txt"))?;
    let cycles = inputs(dir, |n| n == "cycles_layers.csv")?;
    if evals.is_empty() && plans.is_empty() && cycles.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} holds no eval*.csv, plan*.txt or cycles_layers.csv to report on",
            dir.display()
        )));
    }
    let seeds: BTreeSet<String> = evals
        .iter()
        .chain(&plans)
        .chain(&cycles)
        .filter_map(|i| comment_value(&i.text, "seed"))
        .collect();
    let seed = if seeds.is_empty() {
        "unrecorded".to_string()
    } else {
        seeds.into_iter().collect::<Vec<_>>().join("+")
    };
    let head = format!("# seed={seed}\n# command=report\n");
    let mut text = head.clone();

    let tables: Vec<EvalTable> = evals.iter().map(EvalTable::parse).collect::<Result<_>>()?;
    let mut t1 = vec![split(TABLE1_COLUMNS)];
    let mut t2 = vec![split(TABLE2_COLUMNS)];
    for t in &tables {
        for m in t.of_kind("mean") {
            if same_sigma(&m[4], table1_sigma) {
                t1.push(vec![
                    m[0].clone(),
                    m[1].clone(),
                    m[4].clone(),
                    m[5].clone(),
                    m[6].clone(),
                    m[7].clone(),
                    m[8].clone(),
                ]);
            }
            let sd = t
                .of_kind("std")
                .find(|s| s[0] == m[0] && s[1] == m[1] && s[4] == m[4]);
            let pick = |c: usize| sd.map(|s| s[c].clone()).unwrap_or_default();
            t2.push(vec![
                m[0].clone(),
                m[1].clone(),
                m[4].clone(),
                m[6].clone(),
                pick(6),
                m[7].clone(),
                pick(7),
            ]);
        }
    }
    if t1.len() > 1 {
        let _ = writeln!(
            text,
            "\nAccuracy (%) at noise sigma {table1_sigma}%, mean over seeds"
        );
        text += &align(&t1);
        write_file(&dir.join("table1.csv"), head.clone() + &to_csv(&t1))?;
    }
    if t2.len() > 1 {
        let _ = writeln!(text, "\nAccuracy (%) by noise sigma");
        text += &align(&t2);
        write_file(&dir.join("table2.csv"), head.clone() + &to_csv(&t2))?;
    }

    for p in &plans {
        let rows = csv_rows(&p.text);
        let _ = writeln!(
            text,
            "\nPlacement {}",
            p.path.file_name().unwrap_or_default().to_string_lossy()
        );
        for key in ["eta_pct", "budget", "backbone_params"] {
            if let Some(v) = comment_value(&p.text, key) {
                let _ = writeln!(text, "{key}: {v}");
            }
        }
        if rows.len() > 1 {
            text += &align(&rows);
        } else {
            let _ = writeln!(text, "no layers selected");
        }
    }

    if let Some(c) = cycles.first() {
        let rows = csv_rows(&c.text);
        if rows.first() != Some(&split(FIG3_COLUMNS)) {
            return Err(CliError::Runtime(format!(
                "{}: expected columns {FIG3_COLUMNS}",
                c.path.display()
            )));
        }
        let _ = writeln!(text, "\nCycles per layer");
        text += &align(&rows);
        for key in CYCLE_SUMMARY_KEYS {
            if let Some(v) = comment_value(&c.text, key) {
                let _ = writeln!(text, "{key}: {v}");
            }
        }
        write_file(&dir.join("fig3.csv"), head.clone() + &to_csv(&rows))?;
    }

    write_file(&dir.join("report.txt"), &text)?;
    Ok(text)
}
