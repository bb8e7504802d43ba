//! Forward lensless imaging models and sensor effects.
//!
//! Convolution geometry: the "full" linear convolution of an `Hx×Wx` scene
//! with an `Hh×Wh` PSF has size `(Hx+Hh−1)×(Wx+Wh−1)`. The PSF origin is cell
//! `((Hh−1)/2, (Wh−1)/2)` (integer division), so a centered crop of the full
//! output back to scene size is aligned with the scene. Crops and pads place
//! the smaller grid at offset `(big − small) / 2` on each axis.

use nalgebra::DMatrix;
use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{check_dims, invalid, Error, Result};
use crate::fft::{fft2_real_padded, ifft2_real};
use crate::optics::Psf;
use crate::recon::weights::{compute_weights, region_grid, WeightField};

/// Largest scene or sensor cell count for which dense operators are built.
pub const DENSE_LIMIT: usize = 4096;

/// Real-valued scene intensity grid.
///
/// Loaded scenes are clipped to `[0, 1]` by [`SceneImage::from_unit_range`];
/// reconstructions and null-space completions keep their exact values.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pixels: Array2<f64>,
}

impl SceneImage {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(invalid("empty scene"));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scene pixels"));
        }
        Ok(Self { pixels })
    }

    pub fn from_unit_range(pixels: Array2<f64>) -> Result<Self> {
        let mut s = Self::new(pixels)?;
        s.pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Ok(s)
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    pub fn view(&self) -> ndarray::ArrayView2<'_, f64> {
        self.pixels.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }
}

/// Sensor readout. When `bit_depth` is set the pixels hold integer counts in
/// `[0, 2^bits − 1]` and `full_scale` is the intensity mapped to the top count.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pixels: Array2<f64>,
    bit_depth: Option<u8>,
    full_scale: f64,
}

impl Measurement {
    pub fn from_intensity(pixels: Array2<f64>) -> Result<Self> {
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement"));
        }
        if pixels.iter().any(|&v| v < 0.0) {
            return Err(invalid("measurement must be nonnegative"));
        }
        Ok(Self { pixels, bit_depth: None, full_scale: 1.0 })
    }

    pub fn from_counts(counts: Array2<f64>, bits: u8, full_scale: f64) -> Result<Self> {
        validate_bits(bits)?;
        let top = max_count(bits);
        if counts.iter().any(|&v| !(0.0..=top).contains(&v) || v.fract() != 0.0) {
            return Err(invalid(format!("counts must be integers in [0, {top}]")));
        }
        if !(full_scale > 0.0 && full_scale.is_finite()) {
            return Err(invalid("full scale must be positive"));
        }
        Ok(Self { pixels: counts, bit_depth: Some(bits), full_scale })
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn bit_depth(&self) -> Option<u8> {
        self.bit_depth
    }

    pub fn full_scale(&self) -> f64 {
        self.full_scale
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    /// Pixel values in intensity units (counts are rescaled by the full scale).
    pub fn intensity(&self) -> Array2<f64> {
        match self.bit_depth {
            None => self.pixels.clone(),
            Some(bits) => {
                let s = self.full_scale / max_count(bits);
                self.pixels.mapv(|c| c * s)
            }
        }
    }
}

fn validate_bits(bits: u8) -> Result<()> {
    if (1..=16).contains(&bits) {
        Ok(())
    } else {
        Err(invalid(format!("quantization depth must be in [1, 16], got {bits}")))
    }
}

fn max_count(bits: u8) -> f64 {
    ((1u32 << bits) - 1) as f64
}

/// Intensity mapped to the top quantization count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantScale {
    /// The capture's own noise-free maximum.
    PerCapture,
    /// A fixed value, e.g. the maximum over a whole noise-free dataset.
    Fixed(f64),
}

/// Sensor and noise settings shared by the forward models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardSpec {
    /// Centered sensor crop `(height, width)`; `None` keeps the full output.
    pub crop: Option<(usize, usize)>,
    /// Replicate-padding expansion applied before deconvolution.
    pub pad_factor: usize,
    pub noise_snr_db: Option<f64>,
    pub quant_bits: Option<u8>,
    pub quant_scale: QuantScale,
    pub seed: u64,
}

impl ForwardSpec {
    /// Linear, noise-free, unquantized, uncropped.
    pub fn noiseless() -> Self {
        Self { crop: None, pad_factor: 1, noise_snr_db: None, quant_bits: None, quant_scale: QuantScale::PerCapture, seed: 0 }
    }

    /// 30 dB noise, 12-bit quantization, factor-2 replicate padding.
    pub fn sensor(crop: Option<(usize, usize)>, seed: u64) -> Self {
        Self {
            crop,
            pad_factor: 2,
            noise_snr_db: Some(30.0),
            quant_bits: Some(12),
            quant_scale: QuantScale::PerCapture,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pad_factor == 0 {
            return Err(invalid("pad factor must be at least 1"));
        }
        if let Some(b) = self.quant_bits {
            validate_bits(b)?;
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return Err(invalid("SNR must be finite"));
            }
        }
        if let QuantScale::Fixed(s) = self.quant_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid("quantization full scale must be positive"));
            }
        }
        Ok(())
    }
}

impl Default for ForwardSpec {
    fn default() -> Self {
        Self::noiseless()
    }
}

/// Full linear convolution of `x` with `h` (zero-padded DFT).
pub fn linear_convolve(x: &Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
    let (hx, wx) = x.dim();
    let (hh, wh) = h.dim();
    let dims = (hx + hh - 1, wx + wh - 1);
    let fx = fft2_real_padded(x, dims);
    let fh = fft2_real_padded(h, dims);
    ifft2_real(Zip::from(&fx).and(&fh).map_collect(|a, b| a * b))
}

/// Centered crop of `a` to `dims`.
pub fn center_crop(a: &Array2<f64>, dims: (usize, usize)) -> Result<Array2<f64>> {
    let (h, w) = a.dim();
    if dims.0 > h || dims.1 > w {
        return Err(invalid(format!("crop {dims:?} exceeds grid {:?}", (h, w))));
    }
    let (r0, c0) = ((h - dims.0) / 2, (w - dims.1) / 2);
    Ok(a.slice(ndarray::s![r0..r0 + dims.0, c0..c0 + dims.1]).to_owned())
}

/// Edge-replicating pad that scales both dimensions by `factor`, with the
/// original content centered.
pub fn replicate_pad_array(a: &Array2<f64>, factor: usize) -> Result<Array2<f64>> {
    if factor == 0 {
        return Err(invalid("pad factor must be at least 1"));
    }
    let (h, w) = a.dim();
    let (nh, nw) = (h * factor, w * factor);
    let (r0, c0) = ((nh - h) / 2, (nw - w) / 2);
    Ok(Array2::from_shape_fn((nh, nw), |(r, c)| {
        let rr = (r as i64 - r0 as i64).clamp(0, h as i64 - 1) as usize;
        let cc = (c as i64 - c0 as i64).clamp(0, w as i64 - 1) as usize;
        a[[rr, cc]]
    }))
}

pub fn replicate_pad(y: &Measurement, factor: usize) -> Result<Measurement> {
    Ok(Measurement {
        pixels: replicate_pad_array(&y.pixels, factor)?,
        bit_depth: y.bit_depth,
        full_scale: y.full_scale,
    })
}

/// Seeded white Gaussian noise scaled so that `10·log10(‖s‖²/‖n‖²)` equals
/// `snr_db` exactly. A zero signal receives no noise.
pub fn noise_for(signal: &Array2<f64>, snr_db: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = Array2::from_shape_fn(signal.dim(), |_| StandardNormal.sample(&mut rng));
    let s2: f64 = signal.iter().map(|v| v * v).sum();
    let n2: f64 = noise.iter().map(|v: &f64| v * v).sum();
    let scale = if s2 > 0.0 && n2 > 0.0 {
        (s2 / n2 / 10f64.powf(snr_db / 10.0)).sqrt()
    } else {
        0.0
    };
    noise.mapv_inplace(|v| v * scale);
    noise
}

/// Round-half-up quantization to `bits`, with `full_scale` mapped to the top
/// count and values clamped to the representable range.
pub fn quantize(values: &Array2<f64>, bits: u8, full_scale: f64) -> Result<Array2<f64>> {
    validate_bits(bits)?;
    if !(full_scale > 0.0 && full_scale.is_finite()) {
        return Err(invalid("quantization full scale must be positive"));
    }
    let top = max_count(bits);
    Ok(values.mapv(|v| (v / full_scale * top + 0.5).floor().clamp(0.0, top)))
}

/// Applies crop, noise, nonnegativity and quantization to a full-size
/// noise-free sensor image.
pub fn sensor_readout(full: &Array2<f64>, spec: &ForwardSpec) -> Result<Measurement> {
    spec.validate()?;
    let clean = match spec.crop {
        Some(dims) => center_crop(full, dims)?,
        None => full.clone(),
    };
    let mut y = clean.clone();
    if let Some(snr) = spec.noise_snr_db {
        y = y + noise_for(&clean, snr, spec.seed);
    }
    y.mapv_inplace(|v| v.max(0.0));
    match spec.quant_bits {
        None => Measurement::from_intensity(y),
        Some(bits) => {
            let fs = match spec.quant_scale {
                QuantScale::Fixed(s) => s,
                QuantScale::PerCapture => {
                    let m = clean.iter().copied().fold(0.0, f64::max);
                    if m > 0.0 {
                        m
                    } else {
                        1.0
                    }
                }
            };
            Measurement::from_counts(quantize(&y, bits, fs)?, bits, fs)
        }
    }
}

/// Noise-free cropped convolution `C(h ∗ x)`.
pub fn conv_linear(x: &Array2<f64>, h: &Psf, crop: Option<(usize, usize)>) -> Result<Array2<f64>> {
    let full = linear_convolve(x, h.intensity());
    match crop {
        Some(dims) => center_crop(&full, dims),
        None => Ok(full),
    }
}

/// Shift-invariant forward model `y = Q(C(h ∗ x) + n)`.
pub fn conv_forward(x: &SceneImage, h: &Psf, spec: &ForwardSpec) -> Result<Measurement> {
    sensor_readout(&linear_convolve(x.pixels(), h.intensity()), spec)
}

/// Spatially-varying low-rank PSF model: `K×K` region PSFs blended by
/// inverse-distance weight maps over the scene.
#[derive(Debug, Clone)]
pub struct SvPsfModel {
    k: usize,
    psfs: Vec<Psf>,
    scene_dims: (usize, usize),
    weights: WeightField,
    otfs: Vec<Array2<Complex64>>,
    full_dims: (usize, usize),
}

impl SvPsfModel {
    /// `psfs` are listed row-major over the region grid (top row first).
    pub fn new(psfs: Vec<Psf>, k: usize, scene_dims: (usize, usize)) -> Result<Self> {
        if k == 0 || psfs.len() != k * k {
            return Err(invalid(format!("expected {} PSFs for K = {k}, got {}", k * k, psfs.len())));
        }
        let pdim = psfs[0].dim();
        for p in &psfs {
            check_dims(pdim, p.dim())?;
        }
        let centers = region_grid(scene_dims, k);
        let weights = compute_weights(scene_dims, &centers)?;
        let full_dims = (scene_dims.0 + pdim.0 - 1, scene_dims.1 + pdim.1 - 1);
        let otfs = psfs.iter().map(|p| fft2_real_padded(p.intensity(), full_dims)).collect();
        Ok(Self { k, psfs, scene_dims, weights, otfs, full_dims })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn psfs(&self) -> &[Psf] {
        &self.psfs
    }

    pub fn scene_dims(&self) -> (usize, usize) {
        self.scene_dims
    }

    pub fn full_dims(&self) -> (usize, usize) {
        self.full_dims
    }

    pub fn weights(&self) -> &WeightField {
        &self.weights
    }

    /// Noise-free full-size output `Σᵢ hᵢ ∗ (wᵢ ⊙ x)`.
    pub fn apply_full(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        check_dims(self.scene_dims, x.dim())?;
        let mut acc = Array2::<Complex64>::zeros(self.full_dims);
        for (otf, w) in self.otfs.iter().zip(self.weights.maps()) {
            let masked = x * w;
            let fm = fft2_real_padded(&masked, self.full_dims);
            Zip::from(&mut acc).and(&fm).and(otf).for_each(|a, &m, &o| *a += m * o);
        }
        Ok(ifft2_real(acc))
    }

    pub fn apply_linear(&self, x: &Array2<f64>, crop: Option<(usize, usize)>) -> Result<Array2<f64>> {
        let full = self.apply_full(x)?;
        match crop {
            Some(dims) => center_crop(&full, dims),
            None => Ok(full),
        }
    }
}

/// Spatially-varying forward model `y = Q(C(Σᵢ hᵢ ∗ (wᵢ ⊙ x)) + n)`.
pub fn sv_forward(x: &SceneImage, model: &SvPsfModel, spec: &ForwardSpec) -> Result<Measurement> {
    sensor_readout(&model.apply_full(x.pixels())?, spec)
}

/// Dense matrix of a linear map from scene grids to sensor grids. Vectors
/// are the row-major flattening of their grids.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    matrix: DMatrix<f64>,
    scene_dims: (usize, usize),
    sensor_dims: (usize, usize),
}

impl LinearOperator {
    pub fn new(matrix: DMatrix<f64>, scene_dims: (usize, usize), sensor_dims: (usize, usize)) -> Result<Self> {
        if matrix.nrows() != sensor_dims.0 * sensor_dims.1 || matrix.ncols() != scene_dims.0 * scene_dims.1 {
            return Err(invalid(format!(
                "matrix shape {}x{} inconsistent with scene {scene_dims:?} and sensor {sensor_dims:?}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("operator matrix"));
        }
        Ok(Self { matrix, scene_dims, sensor_dims })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn scene_dims(&self) -> (usize, usize) {
        self.scene_dims
    }

    pub fn sensor_dims(&self) -> (usize, usize) {
        self.sensor_dims
    }

    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        check_dims(self.scene_dims, x.dim())?;
        let y = &self.matrix * flatten(x);
        Ok(unflatten(&y, self.sensor_dims))
    }
}

pub(crate) fn flatten(a: &Array2<f64>) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_iterator(a.len(), a.iter().copied())
}

pub(crate) fn unflatten(v: &nalgebra::DVector<f64>, dims: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(dims, |(r, c)| v[r * dims.1 + c])
}

/// Materializes a linear forward map column by column: column `j` is the
/// image of the `j`-th standard basis scene.
pub fn build_matrix<F>(forward: F, scene_dims: (usize, usize), sensor_dims: (usize, usize)) -> Result<LinearOperator>
where
    F: Fn(&Array2<f64>) -> Result<Array2<f64>> + Sync,
{
    let n = scene_dims.0 * scene_dims.1;
    let m = sensor_dims.0 * sensor_dims.1;
    if n > DENSE_LIMIT || m > DENSE_LIMIT {
        return Err(Error::TooLarge { size: n.max(m), limit: DENSE_LIMIT });
    }
    let columns: Vec<Array2<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = Array2::zeros(scene_dims);
            e[[j / scene_dims.1, j % scene_dims.1]] = 1.0;
            let col = forward(&e)?;
            check_dims(sensor_dims, col.dim())?;
            Ok(col)
        })
        .collect::<Result<_>>()?;
    let matrix = DMatrix::from_fn(m, n, |i, j| columns[j][[i / sensor_dims.1, i % sensor_dims.1]]);
    LinearOperator::new(matrix, scene_dims, sensor_dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_grid(dims: (usize, usize), seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn(dims, |_| rng.random_range(0.0..1.0))
    }

    fn random_psf(n: usize, seed: u64) -> Psf {
        Psf::new(random_grid((n, n), seed), 1.0).unwrap().normalized().unwrap()
    }

    #[test]
    fn delta_psf_is_identity() {
        let x = SceneImage::new(random_grid((6, 5), 1)).unwrap();
        let y = conv_forward(&x, &Psf::delta(), &ForwardSpec::noiseless()).unwrap();
        assert!(y.intensity().iter().zip(x.pixels().iter()).all(|(a, b)| (a - b).abs() < 1e-12));

        // a centered delta in a 3x3 kernel, cropped back to scene size
        let mut k = Array2::zeros((3, 3));
        k[[1, 1]] = 1.0;
        let h = Psf::new(k, 1.0).unwrap();
        let y = conv_linear(x.pixels(), &h, Some((6, 5))).unwrap();
        assert!(y.iter().zip(x.pixels().iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn linear_convolve_matches_direct_sum() {
        let x = random_grid((5, 4), 2);
        let h = random_grid((3, 2), 3);
        let y = linear_convolve(&x, &h);
        assert_eq!(y.dim(), (7, 5));
        for ((r, c), &v) in y.indexed_iter() {
            let mut acc = 0.0;
            for ((i, j), &xv) in x.indexed_iter() {
                if r >= i && c >= j && r - i < 3 && c - j < 2 {
                    acc += xv * h[[r - i, c - j]];
                }
            }
            assert!((v - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn crop_larger_than_output_is_rejected() {
        let x = SceneImage::new(random_grid((4, 4), 4)).unwrap();
        let spec = ForwardSpec { crop: Some((9, 4)), ..ForwardSpec::noiseless() };
        assert!(conv_forward(&x, &Psf::delta(), &spec).is_err());
    }

    #[test]
    fn noise_hits_requested_snr_and_is_seeded() {
        let s = random_grid((64, 64), 5);
        let n = noise_for(&s, 30.0, 11);
        let snr = 10.0 * (s.iter().map(|v| v * v).sum::<f64>() / n.iter().map(|v| v * v).sum::<f64>()).log10();
        assert!((snr - 30.0).abs() < 1e-9);
        assert_eq!(n, noise_for(&s, 30.0, 11));
        assert_ne!(n, noise_for(&s, 30.0, 12));
    }

    #[test]
    fn quantizer_endpoints() {
        let v = Array2::from_shape_vec((1, 3), vec![0.0, 0.5, 2.0]).unwrap();
        let q = quantize(&v, 12, 2.0).unwrap();
        assert_eq!(q[[0, 0]], 0.0);
        assert_eq!(q[[0, 1]], 1024.0); // 1023.75 rounds up
        assert_eq!(q[[0, 2]], 4095.0);
        assert!(quantize(&v, 0, 1.0).is_err());
        assert!(quantize(&v, 17, 1.0).is_err());
    }

    #[test]
    fn replicate_pad_examples() {
        let a = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = replicate_pad_array(&a, 2).unwrap();
        let expected = [[1., 1., 2., 2.], [1., 1., 2., 2.], [3., 3., 4., 4.], [3., 3., 4., 4.]];
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(p[[r, c]], expected[r][c]);
            }
        }
        assert_eq!(replicate_pad_array(&a, 1).unwrap(), a);
        let flat = Array2::from_elem((3, 5), 0.25);
        assert!(replicate_pad_array(&flat, 3).unwrap().iter().all(|&v| v == 0.25));
        assert!(replicate_pad_array(&a, 0).is_err());
    }

    #[test]
    fn identical_region_psfs_collapse_to_convolution() {
        let h = random_psf(5, 6);
        let model = SvPsfModel::new(vec![h.clone(); 9], 3, (12, 12)).unwrap();
        let x = random_grid((12, 12), 7);
        let a = model.apply_linear(&x, Some((10, 10))).unwrap();
        let b = conv_linear(&x, &h, Some((10, 10))).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn sv_forward_is_linear_without_noise() {
        let psfs = (0..4).map(|i| random_psf(3, 20 + i)).collect();
        let model = SvPsfModel::new(psfs, 2, (8, 8)).unwrap();
        let x = SceneImage::new(random_grid((8, 8), 8)).unwrap();
        let x3 = SceneImage::new(x.pixels() * 3.0).unwrap();
        let spec = ForwardSpec { crop: Some((8, 8)), ..ForwardSpec::noiseless() };
        let a = sv_forward(&x, &model, &spec).unwrap().intensity();
        let b = sv_forward(&x3, &model, &spec).unwrap().intensity();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| (3.0 * p - q).abs() < 1e-12));
    }

    #[test]
    fn build_matrix_identity_and_crop_selection() {
        let op = build_matrix(|x| Ok(x.clone()), (4, 4), (4, 4)).unwrap();
        assert_eq!(op.matrix(), &DMatrix::identity(16, 16));

        let op = build_matrix(|x| conv_linear(x, &Psf::delta(), Some((2, 2))), (4, 4), (2, 2)).unwrap();
        for i in 0..4 {
            let row = op.matrix().row(i);
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 15);
            let (r, c) = (i / 2 + 1, i % 2 + 1);
            assert_eq!(row[r * 4 + c], 1.0);
        }
    }

    #[test]
    fn build_matrix_guards_size() {
        assert!(matches!(
            build_matrix(|x| Ok(x.clone()), (65, 64), (1, 1)),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn conv_matrix_has_toeplitz_rows() {
        let h = random_psf(3, 9);
        let op = build_matrix(|x| conv_linear(x, &h, None), (8, 8), (10, 10)).unwrap();
        let m = op.matrix();
        // A[(r,c),(i,j)] = h[r-i, c-j], so shifting both indices keeps the entry
        for (r, c, i, j) in [(3, 4, 2, 3), (5, 5, 4, 4), (7, 2, 6, 1), (2, 2, 1, 2)] {
            let a = m[(r * 10 + c, i * 8 + j)];
            let b = m[((r + 1) * 10 + c + 1, (i + 1) * 8 + j + 1)];
            assert!((a - b).abs() < 1e-14);
            assert!((a - h.intensity()[[r - i, c - j]]).abs() < 1e-14);
        }
    }
    #[test]
    fn sv_operator_matches_direct_sum() {
        let psfs: Vec<Psf> = (0..9).map(|i| random_psf(5, 40 + i)).collect();
        let model = SvPsfModel::new(psfs.clone(), 3, (16, 16)).unwrap();
        let op = build_matrix(|x| model.apply_linear(x, Some((14, 14))), (16, 16), (14, 14)).unwrap();
        let x = random_grid((16, 16), 50);
        let fast = op.apply(&x).unwrap();
        // brute-force sum over regions, sources and taps, then the centered window
        let mut full = Array2::<f64>::zeros((20, 20));
        for (h, w) in psfs.iter().zip(model.weights().maps()) {
            for ((i, j), &xv) in x.indexed_iter() {
                for ((a, b), &hv) in h.intensity().indexed_iter() {
                    full[[i + a, j + b]] += hv * w[[i, j]] * xv;
                }
            }
        }
        let direct = full.slice(ndarray::s![3..17, 3..17]);
        let scale = direct.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let err = fast.iter().zip(direct.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-10 * scale, "{err}");
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let a = random_grid((12, 10), 60);
        for f in [1, 2, 3] {
            let p = replicate_pad_array(&a, f).unwrap();
            assert_eq!(p.dim(), (12 * f, 10 * f));
            assert_eq!(center_crop(&p, (12, 10)).unwrap(), a);
        }
    }
}
