//! Uniform-to-normal conversion through lookup tables, and the Gaussian
//! generator built on it.

use std::fmt::Write as _;

use crate::error::{HwError, Result};
use crate::fixed::{round_shift, saturate, QFormat};

/// Fractional bits of the radius table (Q4.12).
pub const R_FRAC: u32 = 12;
/// Fractional bits of the cosine table (Q2.14).
pub const COS_FRAC: u32 = 14;

/// `z1 = R(u1) · cos(2π u2)` with both factors read from tables indexed by
/// the top `lut_bits` of the uniform word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Unc {
    lut_bits: u32,
    q: QFormat,
    radius: Vec<i16>,
    cosine: Vec<i16>,
}

impl Unc {
    pub fn new(lut_bits: u32, q: QFormat) -> Result<Self> {
        q.validate()?;
        if !(2..=16).contains(&lut_bits) {
            return Err(HwError::Config(format!(
                "lut_bits must be in 2..=16, got {lut_bits}"
            )));
        }
        let n = 1usize << lut_bits;
        // Bucket midpoints keep ln away from zero.
        let radius = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                let r = (-2.0 * u.ln()).sqrt() * (1u32 << R_FRAC) as f64;
                saturate(r.round_ties_even() as i64)
            })
            .collect();
        let one = 1i16 << COS_FRAC;
        let cosine = (0..n)
            .map(|i| {
                if (4 * i) % n == 0 {
                    // quarter points pinned to exact 1, 0, -1, 0
                    return [one, 0, -one, 0][4 * i / n];
                }
                let c = (std::f64::consts::TAU * i as f64 / n as f64).cos();
                (c * one as f64).round_ties_even() as i16
            })
            .collect();
        Ok(Self {
            lut_bits,
            q,
            radius,
            cosine,
        })
    }

    pub fn lut_bits(&self) -> u32 {
        self.lut_bits
    }

    pub fn qformat(&self) -> QFormat {
        self.q
    }

    pub fn radius_table(&self) -> &[i16] {
        &self.radius
    }

    pub fn cosine_table(&self) -> &[i16] {
        &self.cosine
    }

    fn index_of_word(&self, word: u16) -> usize {
        (word as usize) >> (16 - self.lut_bits)
    }

    /// `z1` from two nonzero 16-bit uniform words.
    pub fn z1_words(&self, w1: u16, w2: u16) -> i16 {
        self.z1_index(self.index_of_word(w1), self.index_of_word(w2))
    }

    /// `z1` from real uniforms in `(0, 1]`.
    pub fn z1(&self, u1: f64, u2: f64) -> Result<i16> {
        let n = self.radius.len();
        let idx = |u: f64, name: &str| {
            if u > 0.0 && u <= 1.0 {
                Ok(((u * n as f64) as usize).min(n - 1))
            } else {
                Err(HwError::Domain(format!("{name} = {u} is outside (0, 1]")))
            }
        };
        Ok(self.z1_index(idx(u1, "u1")?, idx(u2, "u2")?))
    }

    fn z1_index(&self, i1: usize, i2: usize) -> i16 {
        // Q4.12 × Q2.14 → Q6.26, rounded once into the working format.
        let product = self.radius[i1] as i64 * self.cosine[i2] as i64;
        saturate(round_shift(product, R_FRAC + COS_FRAC - self.q.frac_bits))
    }

    /// Both tables as hex, one 16-bit two's-complement word per line.
    pub fn dump_hex(&self) -> (String, String) {
        let dump = |t: &[i16]| {
            let mut s = String::new();
            for v in t {
                let _ = writeln!(s, "{:04x}", *v as u16);
            }
            s
        };
        (dump(&self.radius), dump(&self.cosine))
    }
}

/// `y = sat(round(z1 · σ) + μ)`, all operands in one Q format.
pub fn gauss_gen(z1: i16, mu: i16, sigma: i16, q: QFormat) -> i16 {
    let scaled = round_shift(z1 as i64 * sigma as i64, q.frac_bits);
    saturate(scaled + mu as i64)
}
