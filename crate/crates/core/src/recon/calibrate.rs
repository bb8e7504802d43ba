//! Data-driven calibration of the SVDeconv kernels.
//!
//! Objective over training pairs `(yⱼ, rⱼ)` with `n` scene cells each:
//!
//! `L(P) = (1/(J·n)) Σⱼ ‖Σᵢ wᵢ ⊙ crop(Re F⁻¹(Pᵢ·Yⱼ)) − rⱼ‖² + μ Σᵢ ‖Pᵢ − P⁰ᵢ‖²`
//!
//! where `‖·‖` on kernels sums squared magnitudes over frequencies. `L` is a
//! convex quadratic in the real and imaginary parts of the kernels. Its
//! Hessian is bounded by the diagonal `D(f) = 2 S(f)/(J·n·N) + 2μ`, with
//! `S(f) = Σⱼ |Yⱼ(f)|²` and `N` frame cells; gradient steps are taken in the
//! metric `D`, so any `lr < 2` decreases the loss monotonically.

use ndarray::{s, Array2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{check_dims, invalid, Error, Result};
use crate::fft::{fft2_real, fft2_real_pair};
use crate::imaging::Measurement;
use crate::optics::Psf;
use crate::rangenull::RangeContent;
use crate::recon::svdeconv::{blend, region_estimates, PsfSet};
use crate::recon::weights::WeightField;
use crate::recon::wiener::center_offset;

/// Consecutive loss increases that abort calibration.
pub const DIVERGENCE_EPOCHS: usize = 5;

const CHUNK: usize = 4;
const BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibSolver {
    /// Diagonally preconditioned gradient descent with step `lr`.
    GradientDescent,
    /// Preconditioned nonlinear CG with exact line search (`lr` unused).
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibConfig {
    pub k: usize,
    /// Regularization of the Wiener filters used for initialization.
    pub reg: f64,
    /// Proximity weight toward the initial kernels.
    pub mu: f64,
    pub lr: f64,
    pub epochs: usize,
    pub solver: CalibSolver,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self { k: 3, reg: 1e-3, mu: 1e-10, lr: 1.0, epochs: 200, solver: CalibSolver::GradientDescent }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("K must be at least 1"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(invalid("mu must be nonnegative"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if !(self.reg >= 0.0 && self.reg.is_finite()) {
            return Err(invalid("regularization must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mse: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub psfs: PsfSet,
    /// Entry `e` holds the loss after `e` epochs; entry 0 is the initialization.
    pub history: Vec<EpochStats>,
}

/// Precomputed training data for the calibration objective.
#[derive(Debug, Clone)]
pub struct CalibProblem {
    spectra: Vec<Array2<Complex64>>,
    targets: Vec<Array2<f64>>,
    weights: WeightField,
    init: PsfSet,
    mu: f64,
    curvature: Array2<f64>,
}

impl CalibProblem {
    /// `pairs` hold padded measurements (frame-sized) and scene-sized targets.
    pub fn new(pairs: &[(Measurement, RangeContent)], init: PsfSet, mu: f64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(invalid("calibration needs at least one training pair"));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(invalid("mu must be nonnegative"));
        }
        for (y, r) in pairs {
            check_dims(init.frame_dims(), y.dim())?;
            check_dims(init.scene_dims(), r.dim())?;
        }
        let spectra: Vec<_> = pairs.par_iter().map(|(y, _)| fft2_real(&y.intensity())).collect();
        let targets = pairs.iter().map(|(_, r)| r.pixels().clone()).collect();
        let weights = init.weights()?;
        let n_frame = (init.frame_dims().0 * init.frame_dims().1) as f64;
        let denom = (pairs.len() * init.scene_dims().0 * init.scene_dims().1) as f64 * n_frame;
        let mut power = Array2::<f64>::zeros(init.frame_dims());
        for y in &spectra {
            Zip::from(&mut power).and(y).for_each(|p, z| *p += z.norm_sqr());
        }
        let curvature = power.mapv(|s| 2.0 * s / denom + 2.0 * mu);
        if curvature.iter().any(|&d| d <= 0.0) {
            return Err(invalid("degenerate measurement spectrum: set mu > 0"));
        }
        Ok(Self { spectra, targets, weights, init, mu, curvature })
    }

    pub fn init(&self) -> &PsfSet {
        &self.init
    }

    fn cells(&self) -> f64 {
        (self.targets.len() * self.targets[0].len()) as f64
    }

    fn penalty(&self, kernels: &[Array2<Complex64>]) -> f64 {
        kernels
            .iter()
            .zip(self.init.kernels())
            .map(|(p, p0)| Zip::from(p).and(p0).fold(0.0, |acc, a, b| acc + (a - b).norm_sqr()))
            .sum::<f64>()
            * self.mu
    }

    fn residual(&self, j: usize, kernels: &[Array2<Complex64>]) -> Array2<f64> {
        let est = region_estimates(&self.spectra[j], kernels, self.init.scene_dims());
        blend(&est, &self.weights) - &self.targets[j]
    }

    /// Mean squared error of the blended reconstructions against the targets.
    pub fn mse(&self, kernels: &[Array2<Complex64>]) -> f64 {
        let mut total = 0.0;
        for batch in chunked(self.targets.len()) {
            let parts: Vec<f64> = batch
                .into_par_iter()
                .map(|range| range.map(|j| self.residual(j, kernels).iter().map(|e| e * e).sum::<f64>()).sum())
                .collect();
            total += parts.iter().sum::<f64>();
        }
        total / self.cells()
    }

    pub fn objective(&self, kernels: &[Array2<Complex64>]) -> f64 {
        self.mse(kernels) + self.penalty(kernels)
    }

    /// Returns `(mse, objective, gradient)` where the gradient of each complex
    /// coefficient is `∂L/∂Re + i·∂L/∂Im`.
    pub fn gradient(&self, kernels: &[Array2<Complex64>]) -> (f64, f64, Vec<Array2<Complex64>>) {
        let frame = self.init.frame_dims();
        let scene = self.init.scene_dims();
        let n_frame = (frame.0 * frame.1) as f64;
        let scale = 2.0 / self.cells();
        let (r0, c0) = center_offset(frame, scene);
        let mut grad = vec![Array2::<Complex64>::zeros(frame); kernels.len()];
        let mut sse = 0.0;
        for batch in chunked(self.targets.len()) {
            let parts: Vec<(f64, Vec<Array2<Complex64>>)> = batch
                .into_par_iter()
                .map(|range| {
                    let mut g = vec![Array2::<Complex64>::zeros(frame); kernels.len()];
                    let mut e2 = 0.0;
                    for j in range {
                        let err = self.residual(j, kernels);
                        e2 += err.iter().map(|e| e * e).sum::<f64>();
                        let embeds: Vec<Array2<f64>> = self
                            .weights
                            .maps()
                            .iter()
                            .map(|w| {
                                let mut embed = Array2::<f64>::zeros(frame);
                                Zip::from(embed.slice_mut(s![r0..r0 + scene.0, c0..c0 + scene.1]))
                                    .and(&err)
                                    .and(w)
                                    .for_each(|o, &e, &wv| *o = scale * wv * e);
                                embed
                            })
                            .collect();
                        for (gs, es) in g.chunks_mut(2).zip(embeds.chunks(2)) {
                            let spectra = match es {
                                [a, b] => {
                                    let (fa, fb) = fft2_real_pair(a, b);
                                    vec![fa, fb]
                                }
                                _ => vec![fft2_real(&es[0])],
                            };
                            for (gi, gf) in gs.iter_mut().zip(&spectra) {
                                Zip::from(gi)
                                    .and(gf)
                                    .and(&self.spectra[j])
                                    .for_each(|o, &gf, &y| *o += gf * y.conj() / n_frame);
                            }
                        }
                    }
                    (e2, g)
                })
                .collect();
            for (e2, g) in parts {
                sse += e2;
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc += &gi;
                }
            }
        }
        for (gi, (p, p0)) in grad.iter_mut().zip(kernels.iter().zip(self.init.kernels())) {
            Zip::from(gi).and(p).and(p0).for_each(|o, &a, &b| *o += (a - b) * (2.0 * self.mu));
        }
        let mse = sse / self.cells();
        (mse, mse + self.penalty(kernels), grad)
    }
}

/// Fixed partition of `0..n` into batches of chunk ranges, so parallel
/// reductions always sum in the same order.
fn chunked(n: usize) -> Vec<Vec<std::ops::Range<usize>>> {
    let ranges: Vec<_> = (0..n).step_by(CHUNK).map(|a| a..(a + CHUNK).min(n)).collect();
    ranges.chunks(BATCH).map(|b| b.to_vec()).collect()
}

fn inner(a: &[Array2<Complex64>], b: &[Array2<Complex64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| Zip::from(x).and(y).fold(0.0, |acc, p, q| acc + (p.conj() * q).re))
        .sum()
}

fn precondition(g: &[Array2<Complex64>], d: &Array2<f64>) -> Vec<Array2<Complex64>> {
    g.iter().map(|gi| Zip::from(gi).and(d).map_collect(|z, &c| z / c)).collect()
}

fn axpy(x: &mut [Array2<Complex64>], alpha: f64, dir: &[Array2<Complex64>]) {
    for (xi, di) in x.iter_mut().zip(dir) {
        Zip::from(xi).and(di).for_each(|a, &b| *a += b * alpha);
    }
}

/// Fits the K×K kernels, starting from the Wiener inverse filter of `init`.
pub fn calibrate_kernels(pairs: &[(Measurement, RangeContent)], init: &Psf, cfg: &CalibConfig) -> Result<Calibration> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(invalid("calibration needs at least one training pair"));
    }
    let start = PsfSet::from_wiener(init, cfg.k, pairs[0].1.dim(), pairs[0].0.dim(), cfg.reg)?;
    let problem = CalibProblem::new(pairs, start, cfg.mu)?;
    run(&problem, cfg)
}

/// Runs the configured solver on a prepared problem.
pub fn run(problem: &CalibProblem, cfg: &CalibConfig) -> Result<Calibration> {
    let mut kernels = problem.init.kernels().to_vec();
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let (mut mse, mut obj, mut grad) = problem.gradient(&kernels);
    history.push(EpochStats { epoch: 0, mse, objective: obj });
    let mut increases = 0;
    let mut dir: Vec<Array2<Complex64>> = Vec::new();
    let mut z_prev: Vec<Array2<Complex64>> = Vec::new();
    let mut gz_prev = 0.0;

    for epoch in 1..=cfg.epochs {
        let z = precondition(&grad, &problem.curvature);
        match cfg.solver {
            CalibSolver::GradientDescent => axpy(&mut kernels, -cfg.lr, &z),
            CalibSolver::ConjugateGradient => {
                let gz = inner(&grad, &z);
                if dir.is_empty() {
                    dir = z.iter().map(|a| a.mapv(|v| -v)).collect();
                } else {
                    // Polak-Ribière with restart
                    let diff: Vec<_> = z.iter().zip(&z_prev).map(|(a, b)| a - b).collect();
                    let beta = (inner(&grad, &diff) / gz_prev).max(0.0);
                    for (d, zi) in dir.iter_mut().zip(&z) {
                        Zip::from(d).and(zi).for_each(|a, &b| *a = *a * beta - b);
                    }
                }
                let mut slope = inner(&grad, &dir);
                if slope >= 0.0 {
                    dir = z.iter().map(|a| a.mapv(|v| -v)).collect();
                    slope = -gz;
                }
                let curv = quadratic_term(problem, &dir);
                if curv > 0.0 && slope < 0.0 {
                    axpy(&mut kernels, -slope / (2.0 * curv), &dir);
                }
                z_prev = z;
                gz_prev = gz;
            }
        }
        let prev = obj;
        (mse, obj, grad) = problem.gradient(&kernels);
        if !obj.is_finite() {
            return Err(Error::NonFinite("calibration loss"));
        }
        history.push(EpochStats { epoch, mse, objective: obj });
        increases = if obj > prev { increases + 1 } else { 0 };
        if increases >= DIVERGENCE_EPOCHS {
            let tail = history[history.len() - DIVERGENCE_EPOCHS - 1..].iter().map(|h| h.objective).collect();
            return Err(Error::Diverged { epochs: DIVERGENCE_EPOCHS, tail });
        }
        log::debug!("epoch {epoch}: objective {obj:.6e}");
    }
    let init = &problem.init;
    let psfs = PsfSet::new(init.k(), kernels, init.centers().to_vec(), init.scene_dims(), init.frame_dims(), init.pitch())?;
    Ok(Calibration { psfs, history })
}

/// Second-order coefficient `Q(d)` of `L(P + αd) = L(P) + α⟨∇L, d⟩ + α² Q(d)`.
fn quadratic_term(problem: &CalibProblem, dir: &[Array2<Complex64>]) -> f64 {
    let scene = problem.init.scene_dims();
    let mut total = 0.0;
    for batch in chunked(problem.targets.len()) {
        let parts: Vec<f64> = batch
            .into_par_iter()
            .map(|range| {
                range
                    .map(|j| {
                        let est = region_estimates(&problem.spectra[j], dir, scene);
                        blend(&est, &problem.weights).iter().map(|e| e * e).sum::<f64>()
                    })
                    .sum()
            })
            .collect();
        total += parts.iter().sum::<f64>();
    }
    let reg: f64 = dir.iter().map(|d| d.iter().map(|z| z.norm_sqr()).sum::<f64>()).sum();
    total / problem.cells() + problem.mu * reg
}
