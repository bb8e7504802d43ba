//! Scalar wave optics: Fresnel and angular-spectrum propagation, a direct
//! Huygens–Fresnel integral used as an oracle, off-axis PSF simulation for a
//! phase mask, and shift-registered PSF similarity.
//!
//! Grids are `ndarray` arrays indexed `[[row, col]]`. The optical axis sits at
//! cell `(height / 2, width / 2)`; cell `(r, c)` has transverse coordinates
//! `((c - width/2) * pitch, (r - height/2) * pitch)`.

use std::f64::consts::PI;

use log::warn;
use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{check_dims, invalid, Error, Result};
use crate::fft::{fft2, fft2_real, fftfreq, ifft2, ifft2_real};

/// Default mask-to-sensor distance (1 mm).
pub const DEFAULT_DISTANCE: f64 = 1e-3;
/// Default illumination wavelength (532 nm).
pub const DEFAULT_WAVELENGTH: f64 = 532e-9;
/// Default simulation pitch (6 µm).
pub const DEFAULT_PITCH: f64 = 6e-6;
/// Default simulation grid side.
pub const DEFAULT_GRID: usize = 256;

/// Largest number of cells accepted by [`direct_huygens_propagate`].
pub const DIRECT_ORACLE_LIMIT: usize = 64 * 64;

/// Complex scalar field sampled on a uniform grid at longitudinal position `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    data: Array2<Complex64>,
    pitch: f64,
    z: f64,
}

impl WaveField {
    pub fn new(data: Array2<Complex64>, pitch: f64, z: f64) -> Result<Self> {
        let (h, w) = data.dim();
        if h < 2 || w < 2 {
            return Err(invalid(format!("wave field must be at least 2x2, got {h}x{w}")));
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(invalid(format!("pitch must be positive, got {pitch}")));
        }
        if !z.is_finite() {
            return Err(Error::NonFinite("wave field position"));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("wave field amplitudes"));
        }
        Ok(Self { data, pitch, z })
    }

    pub fn zeros(width: usize, height: usize, pitch: f64) -> Result<Self> {
        Self::new(Array2::zeros((height, width)), pitch, 0.0)
    }

    /// Unit-amplitude normally incident plane wave.
    pub fn plane_wave(width: usize, height: usize, pitch: f64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), Complex64::new(1.0, 0.0)), pitch, 0.0)
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<Complex64> {
        self.data
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// `Σ |U|²` over the grid.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.data.mapv(|v| v.norm_sqr())
    }

    /// Transverse coordinate of a column index.
    pub fn x_of(&self, col: usize) -> f64 {
        axis_coord(col, self.width(), self.pitch)
    }

    /// Transverse coordinate of a row index.
    pub fn y_of(&self, row: usize) -> f64 {
        axis_coord(row, self.height(), self.pitch)
    }
}

fn axis_coord(i: usize, n: usize, pitch: f64) -> f64 {
    (i as f64 - (n / 2) as f64) * pitch
}

/// Distance and wavelength of a free-space propagation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationSpec {
    distance: f64,
    wavelength: f64,
}

impl PropagationSpec {
    pub fn new(distance: f64, wavelength: f64) -> Result<Self> {
        if !(distance > 0.0 && distance.is_finite()) {
            return Err(invalid(format!("propagation distance must be positive, got {distance}")));
        }
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(invalid(format!("wavelength must be positive, got {wavelength}")));
        }
        Ok(Self { distance, wavelength })
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Pitch at which an `n`-cell grid samples the Fresnel kernel critically
    /// (`n · pitch² = λ d`). At this pitch the discrete transfer function and
    /// the sampled paraxial impulse response coincide.
    pub fn critical_pitch(&self, n: usize) -> f64 {
        (self.wavelength * self.distance / n as f64).sqrt()
    }

    /// True when the Fresnel transfer function's chirp is undersampled on an
    /// `n`-cell grid of the given pitch.
    pub fn transfer_aliased(&self, n: usize, pitch: f64) -> bool {
        (n as f64) * pitch * pitch < self.wavelength * self.distance * (1.0 - 1e-9)
    }
}

impl Default for PropagationSpec {
    fn default() -> Self {
        Self { distance: DEFAULT_DISTANCE, wavelength: DEFAULT_WAVELENGTH }
    }
}

/// Phase-only mask; transmission amplitude is exactly one everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMask {
    phase: Array2<f64>,
    pitch: f64,
}

impl PhaseMask {
    pub fn new(phase: Array2<f64>, pitch: f64) -> Result<Self> {
        let (h, w) = phase.dim();
        if h < 2 || w < 2 {
            return Err(invalid(format!("phase mask must be at least 2x2, got {h}x{w}")));
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(invalid(format!("pitch must be positive, got {pitch}")));
        }
        if phase.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mask phase"));
        }
        Ok(Self { phase, pitch })
    }

    /// Zero-phase (fully transparent) mask.
    pub fn flat(width: usize, height: usize, pitch: f64) -> Result<Self> {
        Self::new(Array2::zeros((height, width)), pitch)
    }

    pub fn phase(&self) -> &Array2<f64> {
        &self.phase
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn dim(&self) -> (usize, usize) {
        self.phase.dim()
    }

    /// `exp(j·phase)` per cell.
    pub fn transmission(&self) -> Array2<Complex64> {
        self.phase.mapv(|p| Complex64::from_polar(1.0, p))
    }
}

/// Sensor-plane intensity produced by a point source at infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    intensity: Array2<f64>,
    pitch: f64,
    theta: (f64, f64),
    chief_ray: (f64, f64),
}

impl Psf {
    pub fn new(intensity: Array2<f64>, pitch: f64) -> Result<Self> {
        Self::with_angle(intensity, pitch, (0.0, 0.0), (0.0, 0.0))
    }

    fn with_angle(
        intensity: Array2<f64>,
        pitch: f64,
        theta: (f64, f64),
        chief_ray: (f64, f64),
    ) -> Result<Self> {
        if intensity.is_empty() {
            return Err(invalid("empty PSF grid"));
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(invalid(format!("pitch must be positive, got {pitch}")));
        }
        if intensity.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PSF intensity"));
        }
        if intensity.iter().any(|&v| v < 0.0) {
            return Err(invalid("PSF intensity must be nonnegative"));
        }
        Ok(Self { intensity, pitch, theta, chief_ray })
    }

    /// Single-cell delta PSF of size 1×1.
    pub fn delta() -> Self {
        Self::new(Array2::ones((1, 1)), 1.0).expect("valid delta")
    }

    pub fn intensity(&self) -> &Array2<f64> {
        &self.intensity
    }

    pub fn into_intensity(self) -> Array2<f64> {
        self.intensity
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn dim(&self) -> (usize, usize) {
        self.intensity.dim()
    }

    /// Incidence angles `(θx, θy)` in radians.
    pub fn theta(&self) -> (f64, f64) {
        self.theta
    }

    /// Geometric displacement of the PSF on the sensor (meters). The stored
    /// intensity is expressed in the frame centered on this chief ray.
    pub fn chief_ray_offset(&self) -> (f64, f64) {
        self.chief_ray
    }

    pub fn energy(&self) -> f64 {
        self.intensity.sum()
    }

    /// Copy scaled to unit total energy.
    pub fn normalized(&self) -> Result<Self> {
        let e = self.energy();
        if e <= 0.0 {
            return Err(invalid("cannot normalize a zero-energy PSF"));
        }
        let mut out = self.clone();
        out.intensity.mapv_inplace(|v| v / e);
        Ok(out)
    }
}

/// Precomputed Fresnel transfer function for repeated propagation on one grid.
#[derive(Debug, Clone)]
pub struct FresnelPropagator {
    transfer: Array2<Complex64>,
}

impl FresnelPropagator {
    pub fn new(width: usize, height: usize, pitch: f64, spec: &PropagationSpec) -> Self {
        if spec.transfer_aliased(width.max(height), pitch) {
            warn!(
                "Fresnel transfer function is undersampled: n·pitch² = {:.3e} < λd = {:.3e}",
                width.max(height) as f64 * pitch * pitch,
                spec.wavelength * spec.distance
            );
        }
        let fx = fftfreq(width, pitch);
        let fy = fftfreq(height, pitch);
        let k = spec.wavenumber();
        let lambda = spec.wavelength;
        let d = spec.distance;
        let global = Complex64::from_polar(1.0, k * d);
        let transfer = Array2::from_shape_fn((height, width), |(r, c)| {
            let f2 = fx[c] * fx[c] + fy[r] * fy[r];
            global * Complex64::from_polar(1.0, -PI * lambda * d * f2)
        });
        Self { transfer }
    }

    pub fn transfer(&self) -> &Array2<Complex64> {
        &self.transfer
    }

    /// Propagates `field` forward by the configured distance, in place.
    pub fn forward(&self, field: &mut Array2<Complex64>) {
        fft2(field);
        Zip::from(&mut *field).and(&self.transfer).for_each(|u, &t| *u *= t);
        ifft2(field);
    }

    /// Exact inverse of [`forward`](Self::forward): conjugated transfer function.
    pub fn backward(&self, field: &mut Array2<Complex64>) {
        fft2(field);
        Zip::from(&mut *field).and(&self.transfer).for_each(|u, &t| *u *= t.conj());
        ifft2(field);
    }
}

/// Paraxial (Fresnel) propagation by the transfer-function method on the
/// periodic grid. Unitary: `Σ|U|²` is preserved.
pub fn fresnel_propagate(field: &WaveField, spec: &PropagationSpec) -> Result<WaveField> {
    let prop = FresnelPropagator::new(field.width(), field.height(), field.pitch, spec);
    let mut data = field.data.clone();
    prop.forward(&mut data);
    WaveField::new(data, field.pitch, field.z + spec.distance)
}

/// Non-paraxial angular-spectrum propagation. Evanescent components are
/// discarded.
pub fn angular_spectrum_propagate(field: &WaveField, spec: &PropagationSpec) -> Result<WaveField> {
    let transfer = angular_spectrum_transfer(field.width(), field.height(), field.pitch, spec, (0.0, 0.0));
    let piston = Complex64::from_polar(1.0, spec.wavenumber() * spec.distance);
    let mut data = field.data.clone();
    fft2(&mut data);
    Zip::from(&mut data).and(&transfer).for_each(|u, &t| *u *= t * piston);
    ifft2(&mut data);
    WaveField::new(data, field.pitch, field.z + spec.distance)
}

/// Transfer function of exact free-space propagation for a field whose
/// spectrum is centered on the carrier `carrier` (cycles/m). The carrier's own
/// phase and its linear gradient (the chief-ray translation) are removed, so
/// only the change of the diffraction pattern remains.
fn angular_spectrum_transfer(
    width: usize,
    height: usize,
    pitch: f64,
    spec: &PropagationSpec,
    carrier: (f64, f64),
) -> Array2<Complex64> {
    let fx = fftfreq(width, pitch);
    let fy = fftfreq(height, pitch);
    let inv_l2 = 1.0 / (spec.wavelength * spec.wavelength);
    let d = spec.distance;
    let (cx, cy) = carrier;
    let kz0 = 2.0 * PI * (inv_l2 - cx * cx - cy * cy).sqrt();
    let gx = -(2.0 * PI).powi(2) * cx / kz0;
    let gy = -(2.0 * PI).powi(2) * cy / kz0;
    Array2::from_shape_fn((height, width), |(r, c)| {
        let ux = fx[c] + cx;
        let uy = fy[r] + cy;
        let arg = inv_l2 - ux * ux - uy * uy;
        if arg <= 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let kz = 2.0 * PI * arg.sqrt();
        let phase = d * (kz - kz0 - gx * fx[c] - gy * fy[r]);
        Complex64::from_polar(1.0, phase)
    })
}

/// Evaluates the Huygens–Fresnel integral with the exact path length at one
/// observation point `(x, y)` in the plane `z + d`.
pub fn huygens_at(field: &WaveField, spec: &PropagationSpec, x: f64, y: f64) -> Complex64 {
    let d = spec.distance;
    let k = spec.wavenumber();
    let area = field.pitch * field.pitch;
    let prefactor = Complex64::new(0.0, -d / spec.wavelength) * area;
    let mut acc = Complex64::new(0.0, 0.0);
    for ((r, c), &u) in field.data.indexed_iter() {
        if u.re == 0.0 && u.im == 0.0 {
            continue;
        }
        let dx = x - field.x_of(c);
        let dy = y - field.y_of(r);
        let r2 = d * d + dx * dx + dy * dy;
        acc += u * Complex64::from_polar(1.0 / r2, k * r2.sqrt());
    }
    prefactor * acc
}

/// Brute-force O(N⁴) Huygens–Fresnel propagation onto the same grid. Oracle
/// for [`fresnel_propagate`]; rejected above [`DIRECT_ORACLE_LIMIT`] cells.
pub fn direct_huygens_propagate(field: &WaveField, spec: &PropagationSpec) -> Result<WaveField> {
    let cells = field.width() * field.height();
    if cells > DIRECT_ORACLE_LIMIT {
        return Err(Error::TooLarge { size: cells, limit: DIRECT_ORACLE_LIMIT });
    }
    let (h, w) = field.data.dim();
    let values: Vec<Complex64> = (0..h * w)
        .into_par_iter()
        .map(|i| huygens_at(field, spec, field.x_of(i % w), field.y_of(i / w)))
        .collect();
    let data = Array2::from_shape_vec((h, w), values).expect("shape matches");
    WaveField::new(data, field.pitch, field.z + spec.distance)
}

/// Relative RMS deviation `‖a − b‖ / ‖b‖` between two fields.
pub fn relative_rms(a: &WaveField, b: &WaveField) -> Result<f64> {
    check_dims(b.data.dim(), a.data.dim())?;
    let num: f64 = a.data.iter().zip(b.data.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.data.iter().map(|y| y.norm_sqr()).sum();
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

/// PSF of a point source at infinity with incidence angles `(θx, θy)`.
///
/// The tilted plane wave `exp(jk(sinθx·ξ + sinθy·η))` is modulated by the
/// mask and propagated with the exact angular-spectrum kernel. The tilt
/// carrier is handled analytically, so angles beyond the grid's Nyquist
/// limit remain valid. The returned intensity is centered on the chief ray;
/// its geometric offset is available from [`Psf::chief_ray_offset`].
pub fn simulate_psf(
    mask: &PhaseMask,
    theta_x: f64,
    theta_y: f64,
    spec: &PropagationSpec,
) -> Result<Psf> {
    let limit = PI / 2.0;
    if !(theta_x.abs() < limit && theta_y.abs() < limit) {
        return Err(invalid(format!(
            "incidence angles must lie in (-π/2, π/2), got ({theta_x}, {theta_y})"
        )));
    }
    let (sx, sy) = (theta_x.sin(), theta_y.sin());
    if sx * sx + sy * sy >= 1.0 {
        return Err(invalid("incidence direction is not propagating"));
    }
    let (h, w) = mask.dim();
    let carrier = (sx / spec.wavelength, sy / spec.wavelength);
    let transfer = angular_spectrum_transfer(w, h, mask.pitch, spec, carrier);
    let mut field = mask.transmission();
    fft2(&mut field);
    Zip::from(&mut field).and(&transfer).for_each(|u, &t| *u *= t);
    ifft2(&mut field);
    let cz = (1.0 - sx * sx - sy * sy).sqrt();
    let offset = (spec.distance * sx / cz, spec.distance * sy / cz);
    Psf::with_angle(field.mapv(|v| v.norm_sqr()), mask.pitch, (theta_x, theta_y), offset)
}

/// How [`psf_similarity`] aligns the two PSFs before comparing them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimilarityMode {
    /// Maximum over all cyclic shifts of the normalized inner product.
    #[default]
    Registered,
    /// Plain normalized inner product without alignment.
    Raw,
}

/// Normalized inner product of two PSF intensities, in `[-1, 1]`.
pub fn psf_similarity(a: &Psf, b: &Psf, mode: SimilarityMode) -> Result<f64> {
    similarity_of(&a.intensity, &b.intensity, mode)
}

pub(crate) fn similarity_of(a: &Array2<f64>, b: &Array2<f64>, mode: SimilarityMode) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(invalid("similarity of a zero-energy PSF is undefined"));
    }
    let inner = match mode {
        SimilarityMode::Raw => a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>(),
        SimilarityMode::Registered => {
            let fa = fft2_real(a);
            let fb = fft2_real(b);
            let cross = Zip::from(&fa).and(&fb).map_collect(|x, y| x * y.conj());
            ifft2_real(cross).iter().copied().fold(f64::NEG_INFINITY, f64::max)
        }
    };
    Ok((inner / (na * nb)).clamp(-1.0, 1.0))
}

/// Registered similarity of each off-axis PSF (tilt along x) against the
/// on-axis PSF.
pub fn similarity_sweep(
    mask: &PhaseMask,
    angles: &[f64],
    spec: &PropagationSpec,
) -> Result<Vec<(f64, f64)>> {
    if angles.is_empty() {
        return Err(invalid("angle list is empty"));
    }
    let reference = simulate_psf(mask, 0.0, 0.0, spec)?;
    angles
        .par_iter()
        .map(|&theta| {
            let psf = simulate_psf(mask, theta, 0.0, spec)?;
            Ok((theta, psf_similarity(&reference, &psf, SimilarityMode::Registered)?))
        })
        .collect()
}
