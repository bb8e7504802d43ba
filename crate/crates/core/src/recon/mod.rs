//! Reconstruction: Wiener deconvolution, ADMM-TV and multi-kernel
//! spatially-varying deconvolution with calibrated kernels.

pub mod admm;
pub mod calibrate;
pub mod svdeconv;
pub mod weights;
pub mod wiener;

pub use admm::{admm_tv, soft_threshold, AdmmConfig, AdmmOutput};
pub use calibrate::{calibrate_kernels, CalibConfig, CalibProblem, CalibSolver, Calibration, EpochStats};
pub use svdeconv::{svdeconv_apply, PsfSet};
pub use weights::{compute_weights, region_grid, weights_at, Center, WeightField};
pub use wiener::{psf_otf, wiener_deconvolve, wiener_filter};
