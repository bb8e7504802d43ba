//! Full-reference image quality metrics.

use ndarray::{s, Array2, Zip};

use crate::error::{check_dims, invalid, Result};

/// PSNR reported for identical images (and the ceiling for all others).
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Array2<f64>, b: &Array2<f64>, peak: f64) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(invalid("peak must be positive"));
    }
    if a.is_empty() {
        return Err(invalid("empty image"));
    }
    let mse = Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + (x - y) * (x - y)) / a.len() as f64;
    Ok(psnr_from_mse(mse, peak))
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
    }
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let sum: f64 = g.iter().sum();
    g.into_iter().map(|v| v / sum).collect()
}

/// Separable valid-mode filtering with the SSIM window.
fn filter_valid(a: &Array2<f64>, g: &[f64]) -> Array2<f64> {
    let (h, w) = a.dim();
    let n = g.len();
    let rows = Array2::from_shape_fn((h, w - n + 1), |(r, c)| (0..n).map(|k| g[k] * a[[r, c + k]]).sum::<f64>());
    Array2::from_shape_fn((h - n + 1, w - n + 1), |(r, c)| (0..n).map(|k| g[k] * rows[[r + k, c]]).sum::<f64>())
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5).
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>, peak: f64) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(invalid("peak must be positive"));
    }
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid(format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let g = gaussian_window();
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let mu_a = filter_valid(a, &g);
    let mu_b = filter_valid(b, &g);
    let e_aa = filter_valid(&(a * a), &g);
    let e_bb = filter_valid(&(b * b), &g);
    let e_ab = filter_valid(&(a * b), &g);
    let mut total = 0.0;
    for (((&ma, &mb), (&aa, &bb)), &ab) in mu_a.iter().zip(&mu_b).zip(e_aa.iter().zip(&e_bb)).zip(&e_ab) {
        let num = (2.0 * (ma * mb) + c1) * (2.0 * (ab - ma * mb) + c2);
        let den = (ma * ma + mb * mb + c1) * ((aa - ma * ma) + (bb - mb * mb) + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

/// Central box covering `center_fraction` of each dimension; the rest of the
/// image is the periphery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionSpec {
    center_fraction: f64,
}

impl RegionSpec {
    pub fn new(center_fraction: f64) -> Result<Self> {
        if !(center_fraction > 0.0 && center_fraction < 1.0) {
            return Err(invalid(format!("center fraction must lie in (0, 1), got {center_fraction}")));
        }
        Ok(Self { center_fraction })
    }

    pub fn center_fraction(&self) -> f64 {
        self.center_fraction
    }

    /// `(row0, row1, col0, col1)` of the central box.
    pub fn center_box(&self, dims: (usize, usize)) -> (usize, usize, usize, usize) {
        let ch = (dims.0 as f64 * self.center_fraction).round() as usize;
        let cw = (dims.1 as f64 * self.center_fraction).round() as usize;
        let (r0, c0) = ((dims.0 - ch) / 2, (dims.1 - cw) / 2);
        (r0, r0 + ch, c0, c0 + cw)
    }
}

impl Default for RegionSpec {
    fn default() -> Self {
        Self { center_fraction: 0.5 }
    }
}

/// PSNR over the central box and over its complement.
pub fn region_psnr(a: &Array2<f64>, b: &Array2<f64>, spec: &RegionSpec, peak: f64) -> Result<(f64, f64)> {
    check_dims(a.dim(), b.dim())?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(invalid("peak must be positive"));
    }
    let (r0, r1, c0, c1) = spec.center_box(a.dim());
    let inner = (r1 - r0) * (c1 - c0);
    if inner == 0 || inner == a.len() {
        return Err(invalid(format!("degenerate center/periphery split for {:?}", a.dim())));
    }
    let sq = (a - b).mapv(|v| v * v);
    let center: f64 = sq.slice(s![r0..r1, c0..c1]).sum();
    let all: f64 = sq.sum();
    let rest = (all - center).max(0.0);
    Ok((
        psnr_from_mse(center / inner as f64, peak),
        psnr_from_mse(rest / (a.len() - inner) as f64, peak),
    ))
}
