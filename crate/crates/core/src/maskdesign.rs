//! Phase-mask design: Perlin-contour target PSFs and near-field phase
//! retrieval (alternating projections between mask and sensor planes).

use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::optics::{FresnelPropagator, PhaseMask, PropagationSpec};

/// Seeded 2D gradient noise (improved Perlin noise, one octave).
#[derive(Debug, Clone)]
pub struct PerlinNoise {
    perm: [u8; 512],
}

impl PerlinNoise {
    pub fn new(seed: u64) -> Self {
        let mut table: Vec<u8> = (0..=255).collect();
        table.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = table[i & 255];
        }
        Self { perm }
    }

    fn gradient(&self, hash: u8, x: f64, y: f64) -> f64 {
        match hash & 7 {
            0 => x + y,
            1 => -x + y,
            2 => x - y,
            3 => -x - y,
            4 => x,
            5 => -x,
            6 => y,
            _ => -y,
        }
    }

    /// Noise value at `(x, y)`; roughly within `[-1, 1]`, zero on lattice points.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let xf = x.floor();
        let yf = y.floor();
        let xi = (xf as i64 & 255) as usize;
        let yi = (yf as i64 & 255) as usize;
        let dx = x - xf;
        let dy = y - yf;
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let u = fade(dx);
        let v = fade(dy);
        let p = &self.perm;
        let aa = p[p[xi] as usize + yi];
        let ab = p[p[xi] as usize + yi + 1];
        let ba = p[p[xi + 1] as usize + yi];
        let bb = p[p[xi + 1] as usize + yi + 1];
        let x1 = lerp(u, self.gradient(aa, dx, dy), self.gradient(ba, dx - 1.0, dy));
        let x2 = lerp(u, self.gradient(ab, dx, dy - 1.0), self.gradient(bb, dx - 1.0, dy - 1.0));
        lerp(v, x1, x2)
    }
}

fn lerp(t: f64, a: f64, b: f64) -> f64 {
    a + t * (b - a)
}

/// Contour extraction parameters for [`perlin_contour_psf`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourParams {
    /// Level of the contour, as a fraction of the noise range.
    pub level: f64,
    /// Total width of the level-set band, as a fraction of the noise range.
    pub band_width: f64,
    /// Noise lattice period in cells.
    pub noise_scale: f64,
    /// Standard deviation of the Gaussian blur, in cells.
    pub blur_sigma: f64,
}

impl Default for ContourParams {
    fn default() -> Self {
        Self { level: 0.5, band_width: 0.05, noise_scale: 32.0, blur_sigma: 1.0 }
    }
}

/// Nonnegative target intensity with unit total energy.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPsf {
    intensity: Array2<f64>,
    pitch: f64,
}

impl TargetPsf {
    /// Normalizes `intensity` to unit energy.
    pub fn new(intensity: Array2<f64>, pitch: f64) -> Result<Self> {
        if intensity.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target PSF"));
        }
        if intensity.iter().any(|&v| v < 0.0) {
            return Err(invalid("target PSF must be nonnegative"));
        }
        if !(pitch > 0.0) {
            return Err(invalid("pitch must be positive"));
        }
        let total = intensity.sum();
        if total <= 0.0 {
            return Err(invalid("target PSF has zero energy"));
        }
        Ok(Self { intensity: intensity.mapv(|v| v / total), pitch })
    }

    pub fn intensity(&self) -> &Array2<f64> {
        &self.intensity
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn dim(&self) -> (usize, usize) {
        self.intensity.dim()
    }

    /// Fraction of cells carrying nonzero intensity.
    pub fn support_fraction(&self) -> f64 {
        self.intensity.iter().filter(|&&v| v > 0.0).count() as f64 / self.intensity.len() as f64
    }
}

/// Builds a target PSF from the level-set band of seeded Perlin noise,
/// blurred by a truncated Gaussian (radius 3σ, periodic boundary).
pub fn perlin_contour_psf(
    width: usize,
    height: usize,
    pitch: f64,
    seed: u64,
    params: &ContourParams,
) -> Result<TargetPsf> {
    if width < 16 || height < 16 {
        return Err(invalid(format!("target grid must be at least 16x16, got {width}x{height}")));
    }
    if !(params.noise_scale > 0.0 && params.band_width > 0.0 && params.blur_sigma >= 0.0) {
        return Err(invalid("contour parameters must be positive"));
    }
    let noise = PerlinNoise::new(seed);
    let field = Array2::from_shape_fn((height, width), |(r, c)| {
        noise.sample(c as f64 / params.noise_scale, r as f64 / params.noise_scale)
    });
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::EmptyContour);
    }
    let half_band = params.band_width / 2.0;
    let band = field.mapv(|v| {
        let t = (v - lo) / (hi - lo);
        if (t - params.level).abs() < half_band {
            1.0
        } else {
            0.0
        }
    });
    if band.sum() == 0.0 {
        return Err(Error::EmptyContour);
    }
    TargetPsf::new(periodic_gaussian_blur(&band, params.blur_sigma), pitch)
}

fn periodic_gaussian_blur(a: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma == 0.0 {
        return a.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= norm);
    let (h, w) = a.dim();
    let wrap = |i: i64, n: usize| i.rem_euclid(n as i64) as usize;
    let rows = Array2::from_shape_fn((h, w), |(r, c)| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * a[[r, wrap(c as i64 + k as i64 - radius, w)]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(r, c)| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * rows[[wrap(r as i64 + k as i64 - radius, h), c]])
            .sum::<f64>()
    })
}

/// Near-field phase retrieval settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NfprConfig {
    pub iterations: usize,
    pub propagation: PropagationSpec,
    pub seed: u64,
}

impl NfprConfig {
    pub fn new(iterations: usize, distance: f64, wavelength: f64, seed: u64) -> Result<Self> {
        if iterations == 0 {
            return Err(invalid("phase retrieval needs at least one iteration"));
        }
        Ok(Self { iterations, propagation: PropagationSpec::new(distance, wavelength)?, seed })
    }
}

/// Outcome of [`nfpr_optimize`].
#[derive(Debug, Clone)]
pub struct NfprResult {
    pub mask: PhaseMask,
    /// Relative intensity mismatch `‖|U_s|²/E − t‖ / ‖t‖`; entry `i` is the
    /// mask before iteration `i`, the last entry is the returned mask.
    pub residuals: Vec<f64>,
    /// Largest `||exp(jφ)| − 1|` over every mask-plane field used.
    pub max_amplitude_error: f64,
}

/// Designs a phase mask whose Fresnel-propagated intensity matches `target`.
///
/// Starts from a seeded uniform random phase and alternates: forward
/// propagation, sensor amplitude replaced by `sqrt(target)`, backward
/// propagation, mask amplitude reset to one.
pub fn nfpr_optimize(target: &TargetPsf, config: &NfprConfig) -> Result<NfprResult> {
    let (h, w) = target.dim();
    if h < 2 || w < 2 {
        return Err(invalid("target PSF grid too small"));
    }
    let propagator = FresnelPropagator::new(w, h, target.pitch, &config.propagation);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut phase = Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..2.0 * PI));

    // unit amplitude on every cell: total field energy equals the cell count
    let energy = (h * w) as f64;
    let target_amp = target.intensity.mapv(|t| (t * energy).sqrt());
    let target_norm = target.intensity.iter().map(|t| t * t).sum::<f64>().sqrt();

    let mut residuals = Vec::with_capacity(config.iterations + 1);
    let mut max_amplitude_error = 0.0f64;
    let mut field = Array2::<Complex64>::zeros((h, w));

    let sensor_step = |phase: &Array2<f64>, field: &mut Array2<Complex64>, max_err: &mut f64| -> f64 {
        Zip::from(&mut *field).and(phase).for_each(|u, &p| *u = Complex64::from_polar(1.0, p));
        *max_err = field.iter().fold(*max_err, |m, u| m.max((u.norm() - 1.0).abs()));
        propagator.forward(field);
        let mismatch = Zip::from(&*field)
            .and(&target.intensity)
            .fold(0.0, |acc, u, &t| acc + (u.norm_sqr() / energy - t).powi(2));
        mismatch.sqrt() / target_norm
    };

    for _ in 0..config.iterations {
        residuals.push(sensor_step(&phase, &mut field, &mut max_amplitude_error));
        Zip::from(&mut field).and(&target_amp).for_each(|u, &a| {
            let arg = if u.norm_sqr() > 0.0 { u.arg() } else { 0.0 };
            *u = Complex64::from_polar(a, arg);
        });
        propagator.backward(&mut field);
        Zip::from(&mut phase).and(&field).for_each(|p, u| *p = u.arg());
    }
    residuals.push(sensor_step(&phase, &mut field, &mut max_amplitude_error));

    Ok(NfprResult { mask: PhaseMask::new(phase, target.pitch)?, residuals, max_amplitude_error })
}

/// Intensity of a unit-amplitude mask after Fresnel propagation, normalized
/// to unit energy. Builds self-consistent targets for phase retrieval.
pub fn propagated_target(mask: &PhaseMask, spec: &PropagationSpec) -> Result<TargetPsf> {
    let (h, w) = mask.dim();
    let prop = FresnelPropagator::new(w, h, mask.pitch(), spec);
    let mut field = mask.transmission();
    prop.forward(&mut field);
    TargetPsf::new(field.mapv(|u| u.norm_sqr()), mask.pitch())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perlin_is_deterministic_and_bounded() {
        let a = PerlinNoise::new(7);
        let b = PerlinNoise::new(7);
        let c = PerlinNoise::new(8);
        let mut differs = false;
        for i in 0..200 {
            let (x, y) = (i as f64 * 0.137, i as f64 * 0.291 + 3.0);
            assert_eq!(a.sample(x, y), b.sample(x, y));
            assert!(a.sample(x, y).abs() <= 1.0 + 1e-12);
            differs |= a.sample(x, y) != c.sample(x, y);
        }
        assert!(differs);
        assert_eq!(a.sample(3.0, 5.0), 0.0);
    }

    #[test]
    fn contour_psf_is_normalized_and_deterministic() {
        let p = ContourParams::default();
        let a = perlin_contour_psf(64, 48, 6e-6, 3, &p).unwrap();
        let b = perlin_contour_psf(64, 48, 6e-6, 3, &p).unwrap();
        assert_eq!(a, b);
        assert!((a.intensity().sum() - 1.0).abs() < 1e-12);
        assert!(a.intensity().iter().all(|&v| v >= 0.0));
        assert_eq!(a.dim(), (48, 64));
    }

    #[test]
    fn contour_rejects_small_grids_and_empty_bands() {
        let p = ContourParams::default();
        assert!(perlin_contour_psf(8, 64, 1e-6, 0, &p).is_err());
        let off = ContourParams { level: 2.0, ..p };
        assert!(matches!(perlin_contour_psf(32, 32, 1e-6, 0, &off), Err(Error::EmptyContour)));
    }

    #[test]
    fn nfpr_keeps_unit_amplitude_and_reduces_residual() {
        let spec = PropagationSpec::default();
        let target = perlin_contour_psf(64, 64, 6e-6, 11, &ContourParams { noise_scale: 16.0, ..Default::default() }).unwrap();
        let cfg = NfprConfig { iterations: 30, propagation: spec, seed: 5 };
        let out = nfpr_optimize(&target, &cfg).unwrap();
        assert_eq!(out.residuals.len(), 31);
        assert!(out.max_amplitude_error < 1e-15);
        assert!(out.residuals.last().unwrap() <= &out.residuals[0]);

        let again = nfpr_optimize(&target, &cfg).unwrap();
        assert_eq!(out.mask, again.mask);
    }

    #[test]
    fn nfpr_config_validation() {
        assert!(NfprConfig::new(0, 1e-3, 532e-9, 0).is_err());
        assert!(NfprConfig::new(5, -1e-3, 532e-9, 0).is_err());
    }
}
