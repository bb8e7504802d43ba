//! Tikhonov-regularized Fourier-domain deconvolution.

use ndarray::{s, Array2, Zip};
use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::fft::{fft2, fft2_real, ifft2_real};
use crate::imaging::{Measurement, SceneImage};
use crate::optics::Psf;

/// DFT of `h` on a `frame`-sized periodic grid with the PSF origin
/// (cell `((Hh−1)/2, (Wh−1)/2)`) wrapped to index zero.
pub fn psf_otf(h: &Psf, frame: (usize, usize)) -> Result<Array2<Complex64>> {
    let (hh, wh) = h.dim();
    if hh > frame.0 || wh > frame.1 {
        return Err(invalid(format!("PSF {:?} larger than frame {frame:?}", h.dim())));
    }
    let (cr, cc) = ((hh - 1) / 2, (wh - 1) / 2);
    let mut out = Array2::<Complex64>::zeros(frame);
    for ((r, c), &v) in h.intensity().indexed_iter() {
        let rr = (r + frame.0 - cr) % frame.0;
        let cc2 = (c + frame.1 - cc) % frame.1;
        out[[rr, cc2]] = Complex64::new(v, 0.0);
    }
    fft2(&mut out);
    Ok(out)
}

/// `conj(H) / (|H|² + reg)`.
pub fn wiener_filter(otf: &Array2<Complex64>, reg: f64) -> Result<Array2<Complex64>> {
    if !(reg >= 0.0 && reg.is_finite()) {
        return Err(invalid(format!("regularization must be nonnegative, got {reg}")));
    }
    if otf.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(invalid("all-zero PSF"));
    }
    Ok(otf.mapv(|h| {
        let d = h.norm_sqr() + reg;
        if d > 0.0 {
            h.conj() / d
        } else {
            Complex64::new(0.0, 0.0)
        }
    }))
}

/// Offset of a centered `inner` window inside `outer`.
pub(crate) fn center_offset(outer: (usize, usize), inner: (usize, usize)) -> (usize, usize) {
    ((outer.0 - inner.0) / 2, (outer.1 - inner.1) / 2)
}

/// Applies a frequency-domain filter to a frame spectrum and returns the
/// centered `scene_dims` window of the real result.
pub(crate) fn filter_and_crop(spectrum: &Array2<Complex64>, filter: &Array2<Complex64>, scene_dims: (usize, usize)) -> Array2<f64> {
    let prod = Zip::from(spectrum).and(filter).map_collect(|y, p| y * p);
    let full = ifft2_real(prod);
    let (r0, c0) = center_offset(full.dim(), scene_dims);
    full.slice(s![r0..r0 + scene_dims.0, c0..c0 + scene_dims.1]).to_owned()
}

/// Wiener deconvolution of an already padded measurement. The deconvolution
/// frame is the measurement grid; the result is its centered `scene_dims`
/// window.
pub fn wiener_deconvolve(y: &Measurement, h: &Psf, scene_dims: (usize, usize), reg: f64) -> Result<SceneImage> {
    let frame = y.dim();
    if scene_dims.0 > frame.0 || scene_dims.1 > frame.1 || scene_dims.0 == 0 || scene_dims.1 == 0 {
        return Err(invalid(format!("scene {scene_dims:?} does not fit frame {frame:?}")));
    }
    let filter = wiener_filter(&psf_otf(h, frame)?, reg)?;
    let spectrum = fft2_real(&y.intensity());
    SceneImage::new(filter_and_crop(&spectrum, &filter, scene_dims))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{conv_forward, ForwardSpec};
    use crate::metrics::psnr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scene(n: usize, seed: u64) -> SceneImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SceneImage::new(Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0))).unwrap()
    }

    #[test]
    fn delta_psf_without_regularization_is_identity() {
        let x = random_scene(8, 1);
        let y = Measurement::from_intensity(x.pixels().clone()).unwrap();
        let out = wiener_deconvolve(&y, &Psf::delta(), (8, 8), 0.0).unwrap();
        assert!(out.pixels().iter().zip(x.pixels().iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn zero_measurement_gives_zero() {
        let y = Measurement::from_intensity(Array2::zeros((10, 10))).unwrap();
        let h = Psf::new(Array2::from_elem((3, 3), 1.0 / 9.0), 1.0).unwrap();
        let out = wiener_deconvolve(&y, &h, (8, 8), 1e-3).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let y = Measurement::from_intensity(Array2::ones((4, 4))).unwrap();
        let zero = Psf::new(Array2::zeros((2, 2)), 1.0).unwrap();
        assert!(wiener_deconvolve(&y, &zero, (4, 4), 1e-3).is_err());
        assert!(wiener_deconvolve(&y, &Psf::delta(), (4, 4), -1.0).is_err());
    }

    #[test]
    fn well_conditioned_full_sensor_round_trip() {
        // 0.6 δ plus a weak spread: |H| ≥ 0.2 max|H| on any frame
        let mut k = Array2::from_elem((5, 5), 0.4 / 25.0);
        k[[2, 2]] += 0.6;
        let h = Psf::new(k, 1.0).unwrap();
        let x = random_scene(32, 2);
        let y = conv_forward(&x, &h, &ForwardSpec::noiseless()).unwrap();
        let otf = psf_otf(&h, y.dim()).unwrap();
        let (lo, hi) = otf.iter().fold((f64::MAX, 0.0f64), |(a, b), z| (a.min(z.norm()), b.max(z.norm())));
        assert!(lo >= 0.1 * hi);
        let out = wiener_deconvolve(&y, &h, (32, 32), 1e-6).unwrap();
        assert!(psnr(out.pixels(), x.pixels(), 1.0).unwrap() >= 60.0);
    }

    #[test]
    fn even_psf_crop_alignment() {
        let mut k = Array2::from_elem((4, 4), 0.3 / 16.0);
        k[[1, 1]] += 0.7;
        let h = Psf::new(k, 1.0).unwrap();
        let x = random_scene(16, 3);
        let y = conv_forward(&x, &h, &ForwardSpec::noiseless()).unwrap();
        let out = wiener_deconvolve(&y, &h, (16, 16), 1e-9).unwrap();
        assert!(psnr(out.pixels(), x.pixels(), 1.0).unwrap() >= 60.0);
    }
}
