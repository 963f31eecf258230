//! Signed 16-bit fixed point.

use anoise::Tensor4;
use serde::{Deserialize, Serialize};

use crate::error::{HwError, Result};

pub const TOTAL_BITS: u32 = 16;
pub const ACC_BITS: u32 = 40;

/// `Q(15-f).f`: one sign bit, `15 - f` integer bits, `f` fractional bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QFormat {
    pub frac_bits: u32,
}

impl Default for QFormat {
    fn default() -> Self {
        Self { frac_bits: 8 }
    }
}

impl QFormat {
    pub fn new(frac_bits: u32) -> Result<Self> {
        let q = Self { frac_bits };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=14).contains(&self.frac_bits) {
            return Err(HwError::Config(format!(
                "frac_bits must be in 1..=14, got {}",
                self.frac_bits
            )));
        }
        Ok(())
    }

    pub fn one(&self) -> i64 {
        1 << self.frac_bits
    }

    pub fn lsb(&self) -> f64 {
        1.0 / self.one() as f64
    }

    pub fn min_value(&self) -> f64 {
        i16::MIN as f64 * self.lsb()
    }

    pub fn max_value(&self) -> f64 {
        i16::MAX as f64 * self.lsb()
    }

    /// Round half to even, then saturate. NaN maps to 0.
    pub fn quantize_scalar(&self, x: f64) -> i16 {
        let scaled = (x * self.one() as f64).round_ties_even();
        scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16
    }

    pub fn dequantize_scalar(&self, raw: i16) -> f64 {
        raw as f64 * self.lsb()
    }
}

pub fn saturate(v: i64) -> i16 {
    v.clamp(i16::MIN as i64, i16::MAX as i64) as i16
}

/// `v / 2^shift` rounded half to even.
pub fn round_shift(v: i64, shift: u32) -> i64 {
    if shift == 0 {
        return v;
    }
    let floor = v >> shift;
    let rem = v - (floor << shift);
    let half = 1i64 << (shift - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FxTensor {
    shape: [usize; 4],
    data: Vec<i16>,
    q: QFormat,
}

impl FxTensor {
    pub fn zeros(shape: [usize; 4], q: QFormat) -> Self {
        Self {
            shape,
            data: vec![0; shape.iter().product()],
            q,
        }
    }

    pub fn from_raw(shape: [usize; 4], data: Vec<i16>, q: QFormat) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(crate::error::shape(
                "fixed-point tensor",
                format!("{shape:?} needs {len} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data, q })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn qformat(&self) -> QFormat {
        self.q
    }

    pub fn raw(&self) -> &[i16] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [i16] {
        &mut self.data
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> i16 {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + y) * ws + x]
    }

    /// Image `n` as a batch of one.
    pub fn sample(&self, n: usize) -> FxTensor {
        let len = self.data.len() / self.shape[0].max(1);
        FxTensor {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[n * len..(n + 1) * len].to_vec(),
            q: self.q,
        }
    }

    /// Stacks equally shaped single images into a batch.
    pub fn concat(parts: &[FxTensor]) -> Result<FxTensor> {
        let first = parts
            .first()
            .ok_or_else(|| crate::error::shape("fixed-point concat", "no tensors"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(first.data.len() * parts.len());
        let mut n = 0;
        for p in parts {
            if p.shape[1..] != first.shape[1..] || p.q != first.q {
                return Err(crate::error::shape(
                    "fixed-point concat",
                    format!("{:?} vs {:?}", p.shape, first.shape),
                ));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Self::from_raw([n, c, h, w], data, first.q)
    }

    pub(crate) fn expect_shape(&self, other: [usize; 4], context: &str) -> Result<()> {
        if self.shape != other {
            return Err(crate::error::shape(
                context,
                format!("{:?} vs {:?}", self.shape, other),
            ));
        }
        Ok(())
    }
}

pub fn quantize(x: &Tensor4, q: QFormat) -> FxTensor {
    FxTensor {
        shape: x.shape(),
        data: x.data().iter().map(|&v| q.quantize_scalar(v)).collect(),
        q,
    }
}

pub fn dequantize(x: &FxTensor) -> Tensor4 {
    Tensor4::from_vec(
        x.shape,
        x.data.iter().map(|&r| x.q.dequantize_scalar(r)).collect(),
    )
    .expect("shape and data agree")
}
