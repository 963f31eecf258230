//! Criterion 9: `hw-sim` on a 20-convolution shape table with blocks at two
//! layers, checked against sums of its own CSV rows.

use std::collections::BTreeSet;
use std::process::Command;

use anoise_hw::report::SHAPE_TABLE_HEADER;

use crate::Check;

const DENOISED: [usize; 2] = [0, 19];

fn table() -> String {
    let mut t = format!("# twenty convolutions\n{SHAPE_TABLE_HEADER}\n");
    let (mut c, mut side) = (3, 32);
    for i in 0..20 {
        let out = [16, 32, 64, 128][i / 5];
        let stride = if i % 5 == 0 && i > 0 { 2 } else { 1 };
        let next = side / stride;
        let ratio = if DENOISED.contains(&i) { 0.25 } else { 0.0 };
        t += &format!("conv2d,{c},{out},{side},{side},{next},{next},{ratio}\n");
        c = out;
        side = next;
    }
    t
}

fn header_value(text: &str, key: &str) -> Option<String> {
    text.lines()
        .filter_map(|l| l.strip_prefix("# "))
        .find_map(|l| l.strip_prefix(key)?.strip_prefix('=').map(String::from))
}

pub fn run() -> Check {
    let dir = std::env::temp_dir().join(format!("anoise-acceptance-9-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(crate::fail)?;
    std::fs::write(dir.join("shapes.csv"), table()).map_err(crate::fail)?;
    let out = Command::new(env!("CARGO_BIN_EXE_anoise"))
        .current_dir(&dir)
        .args(["hw-sim", "--shapes", "shapes.csv", "--out-dir", "."])
        .output()
        .map_err(crate::fail)?;
    ensure!(out.status.success(), "hw-sim failed: {}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(dir.join("cycles_trace.csv")).map_err(crate::fail)?;
    let layers = std::fs::read_to_string(dir.join("cycles_layers.csv")).map_err(crate::fail)?;
    let _ = std::fs::remove_dir_all(&dir);

    let mut rows = trace.lines().filter(|l| !l.starts_with('#'));
    ensure!(rows.next() == Some("layer,phase,cycles,cumulative"), "trace header");
    let (mut without, mut with, mut last) = (0u64, 0u64, 0u64);
    let mut touched = BTreeSet::new();
    let mut base_layers = BTreeSet::new();
    for line in rows {
        let f: Vec<&str> = line.split(',').collect();
        ensure!(f.len() == 4, "trace row `{line}`");
        let layer: usize = f[0].parse().map_err(crate::fail)?;
        let cycles: u64 = f[2].parse().map_err(crate::fail)?;
        with += cycles;
        if f[1] == "base" {
            without += cycles;
            base_layers.insert(layer);
        } else {
            touched.insert(layer);
        }
        last = f[3].parse().map_err(crate::fail)?;
    }
    ensure!(base_layers.len() == 20, "{} layers in the trace", base_layers.len());
    ensure!(touched.iter().copied().eq(DENOISED), "added phases at layers {touched:?}");
    ensure!(last == with, "final cumulative {last} vs row sum {with}");

    let mut per_layer_sum = 0u64;
    for line in layers.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let layer: usize = f[0].parse().map_err(crate::fail)?;
        let (base, added, total): (u64, u64, u64) =
            (f[2].parse().map_err(crate::fail)?, f[3].parse().map_err(crate::fail)?, f[4].parse().map_err(crate::fail)?);
        ensure!(base + added == total, "layer {layer}: {base} + {added} != {total}");
        ensure!((added > 0) == DENOISED.contains(&layer), "layer {layer} adds {added} cycles");
        per_layer_sum += total;
    }
    ensure!(per_layer_sum == with, "per-layer total {per_layer_sum} vs trace {with}");

    let expected = (with as f64 - without as f64) / without as f64 * 100.0;
    let reported: f64 = header_value(&trace, "overhead_pct").ok_or_else(|| crate::fail("no overhead_pct"))?.parse().map_err(crate::fail)?;
    let rep_without: u64 = header_value(&trace, "total_without").ok_or_else(|| crate::fail("no total_without"))?.parse().map_err(crate::fail)?;
    let rep_with: u64 = header_value(&trace, "total_with").ok_or_else(|| crate::fail("no total_with"))?.parse().map_err(crate::fail)?;
    ensure!((rep_without, rep_with) == (without, with), "reported totals ({rep_without}, {rep_with}) vs sums ({without}, {with})");
    ensure!(reported == expected, "reported overhead {reported} vs hand-summed {expected}");
    Ok(format!(
        "added cycles only at layers {DENOISED:?}; overhead_pct {reported} = ({with} - {without}) / {without} * 100 exactly"
    ))
}
