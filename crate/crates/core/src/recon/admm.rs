//! ADMM solver for total-variation regularized deconvolution with an
//! explicit sensor crop.
//!
//! Solves `min_x ½‖C(h ∗ x) − y‖² + τ‖∇x‖₁` subject to `x ≥ 0` on a periodic
//! frame of `pad_factor ×` the sensor size, with splits `v = h ∗ x`,
//! `u = ∇x` (anisotropic forward differences) and `w = x`.

use ndarray::{s, Array2, Zip};
use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::fft::{fft2, ifft2_real};
use crate::imaging::{Measurement, SceneImage};
use crate::optics::Psf;
use crate::recon::wiener::{center_offset, psf_otf};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmConfig {
    pub tv_weight: f64,
    pub rho: f64,
    pub iterations: usize,
    /// Stop once the normalized primal residual falls below this value.
    pub tolerance: f64,
    pub pad_factor: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self { tv_weight: 1e-3, rho: 1.0, iterations: 100, tolerance: 1e-6, pad_factor: 2 }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tv_weight > 0.0 && self.tv_weight.is_finite()) {
            return Err(invalid("TV weight must be positive"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(invalid("ADMM penalty must be positive"));
        }
        if self.iterations == 0 {
            return Err(invalid("ADMM needs at least one iteration"));
        }
        if self.pad_factor == 0 {
            return Err(invalid("pad factor must be at least 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(invalid("tolerance must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdmmOutput {
    pub scene: SceneImage,
    /// Normalized primal residual after each iteration.
    pub primal_residuals: Vec<f64>,
}

/// `sign(v)·max(|v| − κ, 0)`.
pub fn soft_threshold(v: f64, kappa: f64) -> f64 {
    v.signum() * (v.abs() - kappa).max(0.0)
}

fn cfft(a: &Array2<f64>) -> Array2<Complex64> {
    let mut z = a.mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut z);
    z
}

fn grad(x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = x.dim();
    let gr = Array2::from_shape_fn((h, w), |(r, c)| x[[(r + 1) % h, c]] - x[[r, c]]);
    let gc = Array2::from_shape_fn((h, w), |(r, c)| x[[r, (c + 1) % w]] - x[[r, c]]);
    (gr, gc)
}

fn grad_adjoint(gr: &Array2<f64>, gc: &Array2<f64>) -> Array2<f64> {
    let (h, w) = gr.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        gr[[(r + h - 1) % h, c]] - gr[[r, c]] + gc[[r, (c + w - 1) % w]] - gc[[r, c]]
    })
}

fn sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Reconstructs a `scene_dims` image from a raw (unpadded) sensor image.
pub fn admm_tv(y: &Measurement, h: &Psf, scene_dims: (usize, usize), cfg: &AdmmConfig) -> Result<AdmmOutput> {
    cfg.validate()?;
    let sensor = y.dim();
    let frame = (sensor.0 * cfg.pad_factor, sensor.1 * cfg.pad_factor);
    if scene_dims.0 > frame.0 || scene_dims.1 > frame.1 || scene_dims.0 == 0 || scene_dims.1 == 0 {
        return Err(invalid(format!("scene {scene_dims:?} does not fit frame {frame:?}")));
    }
    let otf = psf_otf(h, frame)?;
    let rho = cfg.rho;
    let kappa = cfg.tv_weight / rho;

    // Cᵀy and the diagonal of CᵀC
    let (sr, sc) = center_offset(frame, sensor);
    let mut cty = Array2::<f64>::zeros(frame);
    cty.slice_mut(s![sr..sr + sensor.0, sc..sc + sensor.1]).assign(&y.intensity());
    let mut ctc = Array2::<f64>::zeros(frame);
    ctc.slice_mut(s![sr..sr + sensor.0, sc..sc + sensor.1]).fill(1.0);

    // |H|² + |∇|² + 1 in the Fourier domain
    let lap = Array2::from_shape_fn(frame, |(r, c)| {
        let a = 2.0 * std::f64::consts::PI * r as f64 / frame.0 as f64;
        let b = 2.0 * std::f64::consts::PI * c as f64 / frame.1 as f64;
        (2.0 - 2.0 * a.cos()) + (2.0 - 2.0 * b.cos())
    });
    let denom = Zip::from(&otf).and(&lap).map_collect(|z, &l| z.norm_sqr() + l + 1.0);

    let zeros = Array2::<f64>::zeros(frame);
    let mut x = zeros.clone();
    let mut v = zeros.clone();
    let (mut ur, mut uc, mut w) = (zeros.clone(), zeros.clone(), zeros.clone());
    let (mut xi, mut eta_r, mut eta_c, mut zeta) = (zeros.clone(), zeros.clone(), zeros.clone(), zeros);
    let mut hx = Array2::<f64>::zeros(frame);
    let (mut gr, mut gc) = grad(&x);
    let mut residuals = Vec::with_capacity(cfg.iterations);

    for _ in 0..cfg.iterations {
        // u, v, w updates
        Zip::from(&mut v).and(&cty).and(&ctc).and(&hx).and(&xi).for_each(|v, &cy, &m, &hx, &xi| {
            *v = (cy + rho * hx + xi) / (m + rho);
        });
        Zip::from(&mut ur).and(&gr).and(&eta_r).for_each(|u, &g, &e| *u = soft_threshold(g + e / rho, kappa));
        Zip::from(&mut uc).and(&gc).and(&eta_c).for_each(|u, &g, &e| *u = soft_threshold(g + e / rho, kappa));
        Zip::from(&mut w).and(&x).and(&zeta).for_each(|w, &x, &z| *w = (x + z / rho).max(0.0));

        // x update: (HᵀH + ∇ᵀ∇ + I) x = Hᵀ(v − ξ/ρ) + ∇ᵀ(u − η/ρ) + (w − ζ/ρ)
        let a = Zip::from(&v).and(&xi).map_collect(|&v, &xi| v - xi / rho);
        let br = Zip::from(&ur).and(&eta_r).map_collect(|&u, &e| u - e / rho);
        let bc = Zip::from(&uc).and(&eta_c).map_collect(|&u, &e| u - e / rho);
        let c = Zip::from(&w).and(&zeta).map_collect(|&w, &z| w - z / rho);
        let rhs_r = grad_adjoint(&br, &bc) + &c;
        let fa = cfft(&a);
        let fr = cfft(&rhs_r);
        let fx = Zip::from(&fa).and(&fr).and(&otf).and(&denom).map_collect(|&a, &r, &h, &d| (h.conj() * a + r) / d);
        let hx_f = Zip::from(&fx).and(&otf).map_collect(|&x, &h| x * h);
        x = ifft2_real(fx);
        hx = ifft2_real(hx_f);
        (gr, gc) = grad(&x);

        // dual ascent
        let mut primal = 0.0;
        Zip::from(&mut xi).and(&hx).and(&v).for_each(|d, &a, &b| *d += rho * (a - b));
        Zip::from(&mut eta_r).and(&gr).and(&ur).for_each(|d, &a, &b| *d += rho * (a - b));
        Zip::from(&mut eta_c).and(&gc).and(&uc).for_each(|d, &a, &b| *d += rho * (a - b));
        Zip::from(&mut zeta).and(&x).and(&w).for_each(|d, &a, &b| *d += rho * (a - b));
        primal += sq(&(&hx - &v)) + sq(&(&gr - &ur)) + sq(&(&gc - &uc)) + sq(&(&x - &w));
        let scale = (sq(&hx) + sq(&gr) + sq(&gc) + sq(&x)).max(sq(&v) + sq(&ur) + sq(&uc) + sq(&w));
        let r = if scale > 0.0 { (primal / scale).sqrt() } else { primal.sqrt() };
        residuals.push(r);
        if r < cfg.tolerance {
            break;
        }
    }
    let (r0, c0) = center_offset(frame, scene_dims);
    let out = x.slice(s![r0..r0 + scene_dims.0, c0..c0 + scene_dims.1]).mapv(|v| v.max(0.0));
    Ok(AdmmOutput { scene: SceneImage::new(out)?, primal_residuals: residuals })
}
