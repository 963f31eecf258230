//! Fixed-point functional model and cycle model of a denoiser accelerator.
//!
//! Activations and weights are signed 16-bit fixed point ([`QFormat`]).
//! Gaussian samples come from pairs of 16-bit LFSRs fed through a
//! lookup-table Box-Muller converter ([`Unc`]). Convolutions run on 3×3
//! input-stationary systolic cores whose cycle counts have a closed form
//! ([`cycles`]); the [`dcu`] sequences one denoising block over those cores
//! and the cancellation lanes.

pub mod cancel;
pub mod conv;
pub mod cycles;
pub mod dcu;
pub mod error;
pub mod fixed;
pub mod lfsr;
pub mod report;
pub mod unc;

pub use cycles::HwConfig;
pub use error::{HwError, Result};
pub use fixed::{dequantize, quantize, FxTensor, QFormat};
pub use lfsr::{Lfsr, LfsrBank};
pub use unc::{gauss_gen, Unc};

/// The hardware chapter of the book, compiled as doc-tests.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/hardware.md")]
mod book {}
