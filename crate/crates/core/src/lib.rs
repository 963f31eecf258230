//! Noise injection, bottleneck denoisers and gradient-norm placement for
//! small convolutional networks.
//!
//! The crate models analog matrix-vector noise as additive Gaussian noise on
//! layer outputs, attaches lightweight probabilistic denoising blocks to a
//! frozen backbone, trains them through the reparameterized noise sample,
//! and decides where to put them under a parameter budget.
//!
//! The companion book (`book/`) walks through each piece; its code listings
//! are compiled as doc-tests of this crate.

pub mod container;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod graph;
pub mod layer;
pub mod loss;
pub mod noise;
pub mod ops;
pub mod optim;
pub mod placement;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Mode, ModelGraph, Sampling};
pub use tensor::Tensor4;

/// Book chapters, compiled so their listings stay in sync with the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/denoiser.md")]
    mod denoiser {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/placement.md")]
    mod placement {}
}
