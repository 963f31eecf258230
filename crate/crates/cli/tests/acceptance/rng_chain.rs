//! Criterion 4: LFSR period and the LFSR → UNC → gauss_gen chain.

use std::collections::HashSet;

use anoise_hw::lfsr::{Lfsr, LfsrBank, PERIOD};
use anoise_hw::{gauss_gen, QFormat, Unc};

use crate::Check;

const SAMPLES: usize = 1_000_000;

struct Stats {
    mean: f64,
    var: f64,
    median: f64,
    p84: f64,
}

fn stats(mut z: Vec<f64>) -> Stats {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    z.sort_by(f64::total_cmp);
    Stats { mean, var, median: z[z.len() / 2], p84: z[(0.8413 * n) as usize] }
}

pub fn run() -> Check {
    // The state cycle from any nonzero seed visits all 65535 nonzero states.
    for seed in [0x0001u16, 0xace1, 0xffff] {
        let mut l = Lfsr::new(seed)?;
        let mut seen = HashSet::with_capacity(PERIOD as usize);
        for step in 0..PERIOD {
            ensure!(seen.insert(l.state()), "seed {seed:#06x} repeats at step {step}");
            l.step_bit();
            ensure!(l.state() != 0, "seed {seed:#06x} reached zero at step {step}");
        }
        ensure!(l.state() == seed, "seed {seed:#06x} did not return after {PERIOD} steps");
    }
    ensure!(Lfsr::new(0).is_err(), "zero seed accepted");

    let q = QFormat::default();
    let unc = Unc::new(10, q)?;
    let (mu, sigma) = (0, q.quantize_scalar(1.0));
    let mut worst = (0.0f64, 0.0f64);
    let banks = [1u64, 2, 3, 4];
    for bank_seed in banks {
        let mut bank = LfsrBank::from_seed(bank_seed, 4)?;
        let lanes = bank.lanes();
        let ys: Vec<f64> = (0..SAMPLES)
            .map(|i| {
                let (a, b) = bank.lane_mut(i % lanes);
                let z = unc.z1_words(a.next_word(), b.next_word());
                q.dequantize_scalar(gauss_gen(z, mu, sigma, q))
            })
            .collect();
        let s = stats(ys);
        ensure!(s.mean.abs() < 0.02, "bank {bank_seed}: mean {}", s.mean);
        ensure!((0.95..=1.05).contains(&s.var), "bank {bank_seed}: variance {}", s.var);
        ensure!(s.median.abs() < 0.02, "bank {bank_seed}: median {}", s.median);
        ensure!((0.93..=1.07).contains(&s.p84), "bank {bank_seed}: 84.13th percentile {}", s.p84);
        worst.0 = worst.0.max(s.mean.abs());
        worst.1 = worst.1.max((s.var - 1.0).abs());
    }
    Ok(format!(
        "full period from 3 seeds, never zero; {} banks x 10^6 samples: max |mean| {:.4}, max |var-1| {:.4}, median and 84th percentile in range",
        banks.len(),
        worst.0,
        worst.1
    ))
}
