//! 16-bit Fibonacci LFSR with taps 16, 15, 13, 4.

use std::collections::BTreeSet;

use crate::error::{HwError, Result};

pub const PERIOD: u32 = 65_535;
pub const STEPS_PER_SAMPLE: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lfsr {
    state: u16,
}

impl Lfsr {
    pub fn new(seed: u16) -> Result<Self> {
        if seed == 0 {
            return Err(HwError::Config("LFSR seed must be nonzero".into()));
        }
        Ok(Self { state: seed })
    }

    pub fn state(&self) -> u16 {
        self.state
    }

    /// One shift; the feedback bit enters at the top.
    pub fn step_bit(&mut self) {
        let s = self.state;
        let bit = (s ^ (s >> 1) ^ (s >> 3) ^ (s >> 12)) & 1;
        self.state = (s >> 1) | (bit << 15);
    }

    /// Sixteen shifts; returns the new state as the sample word.
    pub fn next_word(&mut self) -> u16 {
        for _ in 0..STEPS_PER_SAMPLE {
            self.step_bit();
        }
        self.state
    }

    /// Next sample as `u = state / 65536`, in `(0, 1)`.
    pub fn next_uniform(&mut self) -> f64 {
        self.next_word() as f64 / 65_536.0
    }
}

/// Two LFSRs per lane (the `U1` and `U2` sources).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LfsrBank {
    lanes: Vec<(Lfsr, Lfsr)>,
}

impl LfsrBank {
    pub fn new(seeds: &[(u16, u16)]) -> Result<Self> {
        if seeds.is_empty() {
            return Err(HwError::Config("LFSR bank needs at least one lane".into()));
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in seeds {
            for s in [a, b] {
                if !seen.insert(s) {
                    return Err(HwError::Config(format!("duplicate LFSR seed {s:#06x}")));
                }
            }
        }
        let lanes = seeds
            .iter()
            .map(|&(a, b)| Ok((Lfsr::new(a)?, Lfsr::new(b)?)))
            .collect::<Result<_>>()?;
        Ok(Self { lanes })
    }

    /// Distinct nonzero seeds derived from one master seed.
    pub fn from_seed(seed: u64, lanes: usize) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut seeds = Vec::with_capacity(2 * lanes);
        let mut counter = 0u64;
        while seeds.len() < 2 * lanes {
            let s = (anoise::rng::derive_seed(seed, &[0x4c46_5352, counter]) & 0xffff) as u16;
            counter += 1;
            if s != 0 && seen.insert(s) {
                seeds.push(s);
            }
        }
        let pairs: Vec<(u16, u16)> = seeds.chunks(2).map(|p| (p[0], p[1])).collect();
        Self::new(&pairs)
    }

    pub fn lanes(&self) -> usize {
        self.lanes.len()
    }

    pub fn lane(&self, i: usize) -> (Lfsr, Lfsr) {
        self.lanes[i]
    }

    pub fn lane_mut(&mut self, i: usize) -> &mut (Lfsr, Lfsr) {
        &mut self.lanes[i]
    }
}
