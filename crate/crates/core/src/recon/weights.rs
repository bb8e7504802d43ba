//! Inverse-distance interpolation weights over a K×K grid of focal centers.
//!
//! Scene coordinates: cell `(row, col)` spans `[col, col+1) × [row, row+1)`
//! and is sampled at its midpoint `(u, v) = (col + 0.5, row + 0.5)`.

use ndarray::Array2;

use crate::error::{invalid, Result};

/// Distances are clamped to `WEIGHT_EPS²` (in cells²) before inversion.
pub const WEIGHT_EPS: f64 = 1e-4;

/// A focal center `(u, v)` in scene cell units: `u` horizontal, `v` vertical.
pub type Center = (f64, f64);

/// Midpoints of a uniform K×K partition of a `(height, width)` scene, listed
/// row-major (top row first, left to right).
pub fn region_grid(scene_dims: (usize, usize), k: usize) -> Vec<Center> {
    let (h, w) = (scene_dims.0 as f64, scene_dims.1 as f64);
    let kf = k as f64;
    let mut out = Vec::with_capacity(k * k);
    for i in 0..k {
        let v = (i as f64 + 0.5) * h / kf;
        for j in 0..k {
            out.push(((j as f64 + 0.5) * w / kf, v));
        }
    }
    out
}

/// Normalized inverse-square-root-distance weights at one point.
pub fn weights_at(u: f64, v: f64, centers: &[Center]) -> Vec<f64> {
    let eps2 = WEIGHT_EPS * WEIGHT_EPS;
    let inv: Vec<f64> = centers
        .iter()
        .map(|&(cu, cv)| {
            let d = (u - cu).powi(2) + (v - cv).powi(2);
            1.0 / d.max(eps2).sqrt()
        })
        .collect();
    let total: f64 = inv.iter().sum();
    inv.into_iter().map(|x| x / total).collect()
}

/// One weight map per focal center; the maps sum to one at every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    maps: Vec<Array2<f64>>,
}

impl WeightField {
    pub fn maps(&self) -> &[Array2<f64>] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.maps[0].dim()
    }
}

pub fn compute_weights(scene_dims: (usize, usize), centers: &[Center]) -> Result<WeightField> {
    if centers.is_empty() {
        return Err(invalid("at least one focal center is required"));
    }
    if scene_dims.0 == 0 || scene_dims.1 == 0 {
        return Err(invalid("empty scene grid"));
    }
    for (i, a) in centers.iter().enumerate() {
        if !(a.0.is_finite() && a.1.is_finite()) {
            return Err(invalid("focal centers must be finite"));
        }
        if centers[..i].contains(a) {
            return Err(invalid(format!("duplicate focal center {a:?}")));
        }
    }
    let mut maps = vec![Array2::zeros(scene_dims); centers.len()];
    for r in 0..scene_dims.0 {
        for c in 0..scene_dims.1 {
            let w = weights_at(c as f64 + 0.5, r as f64 + 0.5, centers);
            for (m, wi) in maps.iter_mut().zip(w) {
                m[[r, c]] = wi;
            }
        }
    }
    Ok(WeightField { maps })
}
