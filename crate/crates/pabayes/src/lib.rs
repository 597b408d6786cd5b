//! Bayesian photoacoustic image reconstruction at desk scale.
//!
//! The crate covers the whole pipeline for limited-view, limited-bandwidth
//! photoacoustic imaging with a linear transducer array:
//!
//! - [`phantom`] — synthetic microvessel ground truth (binary segmentation +
//!   initial-pressure image) and train/val/test dataset generation.
//! - [`acoustics`] — linear acoustic forward model (image → per-element RF
//!   traces), white-noise injection, and the two beamforming preprocessors:
//!   delay-and-sum (DAS) and the multi-channel (MC) delay transform used as
//!   network input.
//! - [`nn`] — a from-scratch differentiable engine (dense grids, reverse-mode
//!   gradients) driving a small U-Net with dropout, batch normalization and
//!   LeakyReLU, trained by Adam with early stopping.
//! - [`losses`] — joint Bernoulli+Laplacian, Laplacian-only, and
//!   Bernoulli+Gaussian negative log-likelihood losses.
//! - [`uncertainty`] — Monte-Carlo-dropout prediction and aggregation into
//!   mean / uncertainty maps with exact data/model decomposition.
//! - [`calibration`] — credibility maps, reliability diagrams (CC and slope),
//!   2-sigma coverage statistics, PSNR and segmentation metrics.
//! - [`confidence`] — relative-uncertainty (SD/M) thresholding that removes
//!   low-confidence pixels from segmentations and images.
//! - [`tnsr`] / [`pgm`] / [`config`] / [`pipeline`] — file formats, run
//!   configuration and the command implementations behind the `pabayes` CLI.
//!
//! Everything is deterministic: every stochastic step draws from a seeded
//! [`rng::DetRng`] and fixed-seed reruns are bit-identical.

// Validation uses `!(x > 0.0)` so NaN fails closed; the numeric kernels
// index in lockstep over several buffers where iterator chains obscure the
// access pattern.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod acoustics;
pub mod calibration;
pub mod config;
pub mod confidence;
pub mod error;
pub mod grid;
pub mod losses;
pub mod nn;
pub mod parallel;
pub mod pgm;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod tnsr;
pub mod uncertainty;

pub use error::{Error, Result};
pub use grid::{Grid, GridSpec};
