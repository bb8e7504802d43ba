//! Simulation and reconstruction toolkit for mask-based lensless cameras.
//!
//! * [`optics`]: scalar wave propagation and off-axis PSF simulation.
//! * [`maskdesign`]: Perlin-contour target PSFs and near-field phase retrieval.
//! * [`imaging`]: shift-invariant and spatially-varying forward models, sensor
//!   effects, and explicit operator matrices.
//! * [`rangenull`]: range/null-space projectors, null-space completion and
//!   diffusion-schedule algebra.
//! * [`recon`]: Wiener, ADMM-TV and multi-kernel spatially-varying deconvolution.
//! * [`metrics`]: PSNR, SSIM and center/periphery evaluation.
//! * [`io`], [`config`], [`pipeline`]: file formats and command pipelines.

pub mod config;
pub mod error;
pub mod fft;
pub mod imaging;
pub mod io;
pub mod maskdesign;
pub mod metrics;
pub mod optics;
pub mod pipeline;
pub mod rangenull;
pub mod recon;

pub use error::{Error, Result};
