//! Multi-kernel spatially-varying deconvolution.

use ndarray::{s, Array2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{check_dims, invalid, Error, Result};
use crate::fft::{fft2_real, ifft2_real_pair};
use crate::imaging::{Measurement, SceneImage};
use crate::optics::Psf;
use crate::recon::weights::{compute_weights, region_grid, Center, WeightField};
use crate::recon::wiener::{center_offset, filter_and_crop, psf_otf, wiener_filter};

/// K×K frequency-domain inverse filters on the padded sensor frame, one per
/// focal region.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfSet {
    k: usize,
    kernels: Vec<Array2<Complex64>>,
    centers: Vec<Center>,
    scene_dims: (usize, usize),
    frame_dims: (usize, usize),
    pitch: f64,
}

impl PsfSet {
    pub fn new(
        k: usize,
        kernels: Vec<Array2<Complex64>>,
        centers: Vec<Center>,
        scene_dims: (usize, usize),
        frame_dims: (usize, usize),
        pitch: f64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(invalid("K must be at least 1"));
        }
        if kernels.len() != k * k || centers.len() != k * k {
            return Err(invalid(format!("expected {} kernels and centers for K = {k}", k * k)));
        }
        if scene_dims.0 > frame_dims.0 || scene_dims.1 > frame_dims.1 || scene_dims.0 == 0 || scene_dims.1 == 0 {
            return Err(invalid(format!("scene {scene_dims:?} does not fit frame {frame_dims:?}")));
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(invalid("pitch must be positive"));
        }
        for p in &kernels {
            check_dims(frame_dims, p.dim())?;
            if p.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(Error::NonFinite("deconvolution kernel"));
            }
        }
        let grid = region_grid(scene_dims, k);
        if grid.iter().zip(&centers).any(|(a, b)| (a.0 - b.0).abs() > 1e-9 || (a.1 - b.1).abs() > 1e-9) {
            return Err(invalid("focal centers must form the uniform region grid"));
        }
        Ok(Self { k, kernels, centers, scene_dims, frame_dims, pitch })
    }

    /// Every kernel set to the Wiener inverse filter of `h`.
    pub fn from_wiener(h: &Psf, k: usize, scene_dims: (usize, usize), frame_dims: (usize, usize), reg: f64) -> Result<Self> {
        let filter = wiener_filter(&psf_otf(h, frame_dims)?, reg)?;
        Self::new(k, vec![filter; k * k], region_grid(scene_dims, k), scene_dims, frame_dims, h.pitch())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kernels(&self) -> &[Array2<Complex64>] {
        &self.kernels
    }

    pub fn centers(&self) -> &[Center] {
        &self.centers
    }

    pub fn scene_dims(&self) -> (usize, usize) {
        self.scene_dims
    }

    pub fn frame_dims(&self) -> (usize, usize) {
        self.frame_dims
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    /// Weight maps for this set's focal centers.
    pub fn weights(&self) -> Result<WeightField> {
        compute_weights(self.scene_dims, &self.centers)
    }

    #[cfg(test)]
    pub(crate) fn kernels_mut(&mut self) -> &mut [Array2<Complex64>] {
        &mut self.kernels
    }
}

/// Per-kernel deconvolutions of a frame spectrum, each cropped to the scene.
///
/// Kernels are processed two at a time, sharing one complex inverse DFT.
pub(crate) fn region_estimates(spectrum: &Array2<Complex64>, kernels: &[Array2<Complex64>], scene_dims: (usize, usize)) -> Vec<Array2<f64>> {
    let parts: Vec<Vec<Array2<f64>>> = kernels
        .par_chunks(2)
        .map(|pair| match pair {
            [a, b] => {
                let (xa, xb) = ifft2_real_pair(&(spectrum * a), &(spectrum * b));
                vec![crop_center(&xa, scene_dims), crop_center(&xb, scene_dims)]
            }
            _ => vec![filter_and_crop(spectrum, &pair[0], scene_dims)],
        })
        .collect();
    parts.into_iter().flatten().collect()
}

fn crop_center(full: &Array2<f64>, scene_dims: (usize, usize)) -> Array2<f64> {
    let (r0, c0) = center_offset(full.dim(), scene_dims);
    full.slice(s![r0..r0 + scene_dims.0, c0..c0 + scene_dims.1]).to_owned()
}

/// Pointwise blend `Σᵢ wᵢ ⊙ xᵢ`, summed in kernel order.
pub(crate) fn blend(estimates: &[Array2<f64>], weights: &WeightField) -> Array2<f64> {
    let mut out = Array2::zeros(estimates[0].dim());
    for (x, w) in estimates.iter().zip(weights.maps()) {
        Zip::from(&mut out).and(x).and(w).for_each(|o, &a, &b| *o += a * b);
    }
    out
}

/// Deconvolves a padded measurement with every kernel and blends the results
/// with the interpolation weights.
pub fn svdeconv_apply(y: &Measurement, psfs: &PsfSet, weights: &WeightField) -> Result<SceneImage> {
    check_dims(psfs.frame_dims, y.dim())?;
    if weights.len() != psfs.kernels.len() {
        return Err(invalid(format!("{} weight maps for {} kernels", weights.len(), psfs.kernels.len())));
    }
    check_dims(psfs.scene_dims, weights.dim())?;
    let spectrum = fft2_real(&y.intensity());
    let est = region_estimates(&spectrum, &psfs.kernels, psfs.scene_dims);
    SceneImage::new(blend(&est, weights))
}
