//! Range/null-space decomposition on explicit operators, the Wiener-based
//! approximate range projection, and diffusion schedule algebra.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dims, invalid, Error, Result};
use crate::imaging::{conv_forward, flatten, replicate_pad, unflatten, ForwardSpec, LinearOperator, SceneImage, DENSE_LIMIT};
use crate::optics::Psf;
use crate::recon::wiener::wiener_deconvolve;

/// Relative singular-value cutoff used when none is given.
pub const DEFAULT_RCOND: f64 = 1e-10;
/// Wiener regularization of the approximate range projection.
pub const DEFAULT_WIENER_REG: f64 = 3e-4;

/// Moore–Penrose pseudo-inverse of a dense operator, with the range projector
/// `A†A` precomputed.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    operator: LinearOperator,
    pinv: DMatrix<f64>,
    projector: DMatrix<f64>,
    singular_values: Vec<f64>,
    rank: usize,
    rcond: f64,
}

pub fn pseudo_inverse(a: &LinearOperator, rcond: f64) -> Result<PseudoInverse> {
    if !(rcond >= 0.0 && rcond.is_finite()) {
        return Err(invalid("rcond must be nonnegative"));
    }
    let m = a.matrix();
    if m.nrows() > DENSE_LIMIT || m.ncols() > DENSE_LIMIT {
        return Err(Error::TooLarge { size: m.nrows().max(m.ncols()), limit: DENSE_LIMIT });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("operator matrix"));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("left singular vectors");
    let vt = svd.v_t.as_ref().expect("right singular vectors");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = rcond * smax;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cutoff && svd.singular_values[i] > 0.0)
        .collect();
    let n = m.ncols();
    let mut v_r = DMatrix::zeros(n, keep.len());
    let mut u_r = DMatrix::zeros(m.nrows(), keep.len());
    for (j, &i) in keep.iter().enumerate() {
        let s = svd.singular_values[i];
        v_r.set_column(j, &vt.row(i).transpose());
        u_r.set_column(j, &(u.column(i) / s));
    }
    let pinv = &v_r * u_r.transpose();
    let projector = &v_r * v_r.transpose();
    let mut singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    singular_values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(PseudoInverse { operator: a.clone(), pinv, projector, singular_values, rank: keep.len(), rcond })
}

impl PseudoInverse {
    pub fn operator(&self) -> &LinearOperator {
        &self.operator
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    /// `A†A`.
    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    pub fn scene_dims(&self) -> (usize, usize) {
        self.operator.scene_dims()
    }

    /// Copy whose `A†` carries seeded Gaussian noise of relative magnitude
    /// `magnitude`; the projector is rebuilt as `A†A`. Used to self-test
    /// invariant checkers.
    pub fn perturbed(&self, magnitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = magnitude * self.pinv.norm() / (self.pinv.len() as f64).sqrt();
        let noise = DMatrix::from_fn(self.pinv.nrows(), self.pinv.ncols(), |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        let pinv = &self.pinv + noise;
        let projector = &pinv * self.operator.matrix();
        Self { pinv, projector, ..self.clone() }
    }

    fn project_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.projector * x
    }
}

/// Scene-sized content in the range of `A†A` (or its Wiener approximation).
#[derive(Debug, Clone, PartialEq)]
pub struct RangeContent {
    pixels: Array2<f64>,
}

impl RangeContent {
    /// Wraps precomputed range content, e.g. a stored training target.
    pub fn from_pixels(pixels: Array2<f64>) -> Self {
        Self { pixels }
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }
}

/// `A†A·x`.
pub fn range_project(x: &SceneImage, pinv: &PseudoInverse) -> Result<RangeContent> {
    check_dims(pinv.scene_dims(), x.dim())?;
    Ok(RangeContent { pixels: unflatten(&pinv.project_vec(&flatten(x.pixels())), x.dim()) })
}

/// `r + (I − A†A)·proposal`.
pub fn null_complete(r: &RangeContent, proposal: &SceneImage, pinv: &PseudoInverse) -> Result<SceneImage> {
    check_dims(pinv.scene_dims(), r.dim())?;
    check_dims(pinv.scene_dims(), proposal.dim())?;
    let p = flatten(proposal.pixels());
    let out = flatten(&r.pixels) + &p - pinv.project_vec(&p);
    SceneImage::new(unflatten(&out, proposal.dim()))
}

/// Full-scale stand-in for `A†A·x`: simulate a measurement through the
/// sensor pipeline, replicate-pad it and Wiener-deconvolve with `h`.
pub fn approx_range_project(x: &SceneImage, h: &Psf, spec: &ForwardSpec, wiener_reg: f64) -> Result<RangeContent> {
    let y = conv_forward(x, h, spec)?;
    let padded = replicate_pad(&y, spec.pad_factor)?;
    let est = wiener_deconvolve(&padded, h, x.dim(), wiener_reg)?;
    Ok(RangeContent { pixels: est.into_pixels() })
}

/// Gaussian diffusion schedule `q(x_t | x_0) = N(α_t x_0, σ_t² I)`, indexed
/// `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    alphas: Vec<f64>,
    sigmas: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(alphas: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() || alphas.len() != sigmas.len() {
            return Err(invalid("schedule needs matching, nonempty alpha and sigma sequences"));
        }
        for (&a, &s) in alphas.iter().zip(&sigmas) {
            if !(a > 0.0 && a <= 1.0) {
                return Err(invalid(format!("alpha {a} outside (0, 1]")));
            }
            if !(s >= 0.0 && s.is_finite()) {
                return Err(invalid(format!("sigma {s} must be nonnegative")));
            }
        }
        let snr: Vec<f64> = alphas.iter().zip(&sigmas).map(|(a, s)| a * a / (s * s)).collect();
        if let Some(t) = snr.windows(2).position(|w| !(w[1] < w[0])) {
            return Err(invalid(format!("signal-to-noise ratio must strictly decrease (t = {})", t + 2)));
        }
        Ok(Self { alphas, sigmas })
    }

    /// Variance-preserving schedule from cumulative noise levels `1 − ᾱ_t`.
    pub fn from_noise_levels(levels: &[f64]) -> Result<Self> {
        if levels.iter().any(|&b| !(0.0..1.0).contains(&b)) {
            return Err(invalid("noise levels must lie in [0, 1)"));
        }
        Self::new(levels.iter().map(|b| (1.0 - b).sqrt()).collect(), levels.iter().map(|b| b.sqrt()).collect())
    }

    /// Variance-preserving schedule with `β` linear from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(invalid("need steps ≥ 1 and 0 < beta_start ≤ beta_end < 1"));
        }
        let mut abar = 1.0;
        let levels: Vec<f64> = (0..steps)
            .map(|i| {
                let frac = if steps > 1 { i as f64 / (steps - 1) as f64 } else { 0.0 };
                abar *= 1.0 - (beta_start + frac * (beta_end - beta_start));
                1.0 - abar
            })
            .collect();
        Self::from_noise_levels(&levels)
    }

    /// Variance-preserving cosine schedule with offset `s`, per-step `β`
    /// clipped at 0.999.
    pub fn cosine(steps: usize, offset: f64) -> Result<Self> {
        if steps == 0 || !(offset > 0.0) {
            return Err(invalid("need steps ≥ 1 and a positive offset"));
        }
        let f = |t: f64| ((t / steps as f64 + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let mut abar = 1.0;
        let mut prev = f(0.0);
        let levels: Vec<f64> = (1..=steps)
            .map(|t| {
                let cur = f(t as f64);
                let beta = (1.0 - cur / prev).min(0.999);
                prev = cur;
                abar *= 1.0 - beta;
                1.0 - abar
            })
            .collect();
        Self::from_noise_levels(&levels)
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// `α_t` for `1 ≤ t ≤ T`.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alphas[t - 1])
    }

    pub fn sigma(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.sigmas[t - 1])
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.alphas.len() {
            return Err(invalid(format!("step {t} outside 1..={}", self.alphas.len())));
        }
        Ok(())
    }
}

/// `(α_{t|s}, σ_{t|s})` of `q(x_t | x_s)`. `s = t` gives the identity
/// transition `(1, 0)`.
pub fn schedule_conditionals(s: usize, t: usize, sched: &DiffusionSchedule) -> Result<(f64, f64)> {
    if s > t {
        return Err(invalid(format!("conditioning step s = {s} must not exceed t = {t}")));
    }
    let (a_s, a_t) = (sched.alpha(s)?, sched.alpha(t)?);
    let (s_s, s_t) = (sched.sigma(s)?, sched.sigma(t)?);
    if s == t {
        return Ok((1.0, 0.0));
    }
    let a = a_t / a_s;
    let var = s_t * s_t - a * a * s_s * s_s;
    Ok((a, var.max(0.0).sqrt()))
}

fn gaussian(dims: (usize, usize), seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn(dims, |_| StandardNormal.sample(&mut rng))
}

/// Samples `x_t = α_t x_0 + σ_t ε`; returns `(x_t, ε)`.
pub fn forward_diffuse(x0: &Array2<f64>, t: usize, sched: &DiffusionSchedule, seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
    let (a, s) = (sched.alpha(t)?, sched.sigma(t)?);
    let eps = gaussian(x0.dim(), seed);
    let xt = x0.mapv(|v| a * v) + eps.mapv(|e| s * e);
    Ok((xt, eps))
}

/// Samples `x_t ~ q(x_t | x_s)` from a given `x_s`.
pub fn transition_sample(xs: &Array2<f64>, s: usize, t: usize, sched: &DiffusionSchedule, seed: u64) -> Result<Array2<f64>> {
    let (a, sig) = schedule_conditionals(s, t, sched)?;
    let eps = gaussian(xs.dim(), seed);
    Ok(xs.mapv(|v| a * v) + eps.mapv(|e| sig * e))
}

/// `ε = (x_t − α_t x_0) / σ_t`.
pub fn recover_noise(xt: &Array2<f64>, x0: &Array2<f64>, t: usize, sched: &DiffusionSchedule) -> Result<Array2<f64>> {
    check_dims(x0.dim(), xt.dim())?;
    let (a, s) = (sched.alpha(t)?, sched.sigma(t)?);
    if s == 0.0 {
        return Err(invalid("noise is not identifiable when sigma is zero"));
    }
    Ok((xt - &x0.mapv(|v| a * v)).mapv(|v| v / s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NullLossMode {
    /// `‖A(ε̂ − ε)‖²`.
    Exact,
    /// `‖ε̂ − ε‖²`.
    Approximate,
}

pub fn null_loss(eps_hat: &Array2<f64>, eps: &Array2<f64>, a: &LinearOperator, mode: NullLossMode) -> Result<f64> {
    check_dims(a.scene_dims(), eps_hat.dim())?;
    check_dims(a.scene_dims(), eps.dim())?;
    let diff = eps_hat - eps;
    Ok(match mode {
        NullLossMode::Exact => a.apply(&diff)?.iter().map(|v| v * v).sum(),
        NullLossMode::Approximate => diff.iter().map(|v| v * v).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_op(m: (usize, usize), n: (usize, usize), seed: u64) -> LinearOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mat = DMatrix::from_fn(m.0 * m.1, n.0 * n.1, |_, _| StandardNormal.sample(&mut rng));
        LinearOperator::new(mat, n, m).unwrap()
    }

    fn random_scene(dims: (usize, usize), seed: u64) -> SceneImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SceneImage::new(Array2::from_shape_fn(dims, |_| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn closed_form_pseudo_inverses() {
        let id = LinearOperator::new(DMatrix::identity(4, 4), (2, 2), (2, 2)).unwrap();
        let p = pseudo_inverse(&id, DEFAULT_RCOND).unwrap();
        assert!((p.matrix() - DMatrix::<f64>::identity(4, 4)).norm() < 1e-14);

        let d = LinearOperator::new(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0])), (1, 2), (1, 2)).unwrap();
        let p = pseudo_inverse(&d, DEFAULT_RCOND).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.0]));
        assert!((p.matrix() - expected).norm() < 1e-14);
        assert_eq!(p.rank(), 1);
    }

    #[test]
    fn penrose_identity_on_wide_matrix() {
        let a = random_op((3, 4), (4, 5), 1);
        let p = pseudo_inverse(&a, DEFAULT_RCOND).unwrap();
        let m = a.matrix();
        assert!((m * p.matrix() * m - m).norm() / m.norm() <= 1e-10);
    }

    #[test]
    fn projection_identities() {
        let a = random_op((4, 5), (4, 4), 2);
        let p = pseudo_inverse(&a, DEFAULT_RCOND).unwrap();
        let x = random_scene((4, 4), 3);
        let r = range_project(&x, &p).unwrap();
        let ax = a.apply(x.pixels()).unwrap();
        let ar = a.apply(r.pixels()).unwrap();
        assert!((&ax - &ar).iter().map(|v| v.abs()).fold(0.0, f64::max) <= 1e-10 * ax.iter().map(|v| v.abs()).fold(0.0, f64::max));
        let rr = range_project(&SceneImage::new(r.pixels().clone()).unwrap(), &p).unwrap();
        assert!((rr.pixels() - r.pixels()).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn zero_operator_projects_to_zero() {
        let z = LinearOperator::new(DMatrix::zeros(4, 4), (2, 2), (2, 2)).unwrap();
        let p = pseudo_inverse(&z, DEFAULT_RCOND).unwrap();
        let r = range_project(&random_scene((2, 2), 4), &p).unwrap();
        assert!(r.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn completion_trivia() {
        let a = random_op((3, 3), (4, 4), 5);
        let p = pseudo_inverse(&a, DEFAULT_RCOND).unwrap();
        let x = random_scene((4, 4), 6);
        let r = range_project(&x, &p).unwrap();
        let back = null_complete(&r, &x, &p).unwrap();
        assert!((back.pixels() - x.pixels()).iter().all(|v| v.abs() < 1e-12));
        let same = null_complete(&r, &SceneImage::new(r.pixels().clone()).unwrap(), &p).unwrap();
        assert!((same.pixels() - r.pixels()).iter().all(|v| v.abs() < 1e-12));
        assert!(null_complete(&r, &random_scene((3, 4), 7), &p).is_err());
    }

    #[test]
    fn perturbation_breaks_consistency() {
        let a = random_op((3, 3), (4, 4), 8);
        let p = pseudo_inverse(&a, DEFAULT_RCOND).unwrap().perturbed(1e-3, 1);
        let x = random_scene((4, 4), 9);
        let r = range_project(&x, &p).unwrap();
        let ax = a.apply(x.pixels()).unwrap();
        let ar = a.apply(r.pixels()).unwrap();
        let rel = (&ax - &ar).iter().map(|v| v * v).sum::<f64>().sqrt() / ax.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rel > 1e-6);
    }

    #[test]
    fn delta_approx_range_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = SceneImage::new(Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..1.0))).unwrap();
        let r = approx_range_project(&x, &Psf::delta(), &ForwardSpec::noiseless(), 0.0).unwrap();
        let rms = ((r.pixels() - x.pixels()).iter().map(|v| v * v).sum::<f64>() / 256.0).sqrt();
        assert!(rms < 1e-6);
    }

    #[test]
    fn vp_example_values() {
        let sched = DiffusionSchedule::from_noise_levels(&[0.1, 0.3]).unwrap();
        let (a, s) = schedule_conditionals(1, 2, &sched).unwrap();
        assert!((a - (0.7f64 / 0.9).sqrt()).abs() < 1e-12);
        assert!((s * s - (0.3 - 0.7 / 0.9 * 0.1)).abs() < 1e-12);
        assert_eq!(schedule_conditionals(2, 2, &sched).unwrap(), (1.0, 0.0));
        assert!(schedule_conditionals(2, 1, &sched).is_err());
        assert!(schedule_conditionals(0, 1, &sched).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(DiffusionSchedule::new(vec![0.9, 0.9], vec![0.1, 0.1]).is_err());
        assert!(DiffusionSchedule::new(vec![1.2], vec![0.1]).is_err());
        assert!(DiffusionSchedule::linear(1000, 1e-4, 0.02).is_ok());
        let c = DiffusionSchedule::cosine(1000, 0.008).unwrap();
        assert_eq!(c.len(), 1000);
    }

    #[test]
    fn reparameterization_round_trip() {
        let sched = DiffusionSchedule::linear(10, 1e-3, 0.2).unwrap();
        let x0 = random_scene((6, 6), 11).into_pixels();
        let (xt, eps) = forward_diffuse(&x0, 7, &sched, 3).unwrap();
        let back = recover_noise(&xt, &x0, 7, &sched).unwrap();
        assert!((back - &eps).iter().all(|v| v.abs() < 1e-12));
        assert!(forward_diffuse(&x0, 11, &sched, 3).is_err());
    }

    #[test]
    fn deterministic_schedule_step_without_noise() {
        let sched = DiffusionSchedule::new(vec![1.0, 0.5], vec![0.0, 0.5]).unwrap();
        let x0 = random_scene((3, 3), 12).into_pixels();
        let (xt, _) = forward_diffuse(&x0, 1, &sched, 0).unwrap();
        assert_eq!(xt, x0);
    }

    #[test]
    fn null_loss_modes() {
        let a = random_op((3, 3), (4, 4), 13);
        let p = pseudo_inverse(&a, DEFAULT_RCOND).unwrap();
        let eps = random_scene((4, 4), 14).into_pixels();
        assert_eq!(null_loss(&eps, &eps, &a, NullLossMode::Exact).unwrap(), 0.0);
        let v = random_scene((4, 4), 15);
        let nv = null_complete(&RangeContent::from_pixels(Array2::zeros((4, 4))), &v, &p).unwrap();
        let eps_hat = &eps + nv.pixels();
        assert!(null_loss(&eps_hat, &eps, &a, NullLossMode::Exact).unwrap() <= 1e-18);
        assert!(null_loss(&eps_hat, &eps, &a, NullLossMode::Approximate).unwrap() > 0.0);
        let id = LinearOperator::new(DMatrix::identity(16, 16), (4, 4), (4, 4)).unwrap();
        let e1 = null_loss(&eps_hat, &eps, &id, NullLossMode::Exact).unwrap();
        let e2 = null_loss(&eps_hat, &eps, &id, NullLossMode::Approximate).unwrap();
        assert!((e1 - e2).abs() < 1e-12 * e2);
    }
    fn moments(v: &Array2<f64>) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.sum() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn monte_carlo_composition_matches_marginal() {
        let n = 100_000;
        let sched = DiffusionSchedule::cosine(50, 0.008).unwrap();
        let x0 = Array2::from_elem((1, n), 0.7);
        for (s, t) in [(5, 20), (1, 50), (30, 31)] {
            let (xs, _) = forward_diffuse(&x0, s, &sched, 100 + s as u64).unwrap();
            let xt = transition_sample(&xs, s, t, &sched, 200 + t as u64).unwrap();
            let (mean, var) = moments(&xt);
            let (a, sig) = (sched.alpha(t).unwrap(), sched.sigma(t).unwrap());
            let se_mean = sig / (n as f64).sqrt();
            let se_var = sig * sig * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!((mean - 0.7 * a).abs() < 3.0 * se_mean, "s={s} t={t} mean {mean}");
            assert!((var - sig * sig).abs() < 3.0 * se_var, "s={s} t={t} var {var}");
        }
    }

    #[test]
    fn forward_diffuse_statistics() {
        let n = 100_000;
        let sched = DiffusionSchedule::linear(100, 1e-4, 0.02).unwrap();
        let x0 = Array2::from_elem((1, n), -0.3);
        let (xt, eps) = forward_diffuse(&x0, 60, &sched, 9).unwrap();
        let (m, v) = moments(&eps);
        assert!(m.abs() < 3.0 / (n as f64).sqrt());
        assert!((v - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
        let (a, sig) = (sched.alpha(60).unwrap(), sched.sigma(60).unwrap());
        assert!((a * a + sig * sig - 1.0).abs() < 1e-12);
        let (m, _) = moments(&xt);
        assert!((m + 0.3 * a).abs() < 3.0 * sig / (n as f64).sqrt());
    }

    #[test]
    fn approx_range_keeps_low_band_and_drops_high_band() {
        let g = Array2::from_shape_fn((9, 9), |(r, c)| (-((r as f64 - 4.0).powi(2) + (c as f64 - 4.0).powi(2)) / 4.5).exp());
        let h = Psf::new(g, 1.0).unwrap().normalized().unwrap();
        let spec = ForwardSpec { crop: Some((32, 32)), ..ForwardSpec::noiseless() };
        let wave = |period: f64| {
            SceneImage::new(Array2::from_shape_fn((32, 32), |(r, c)| {
                0.5 + 0.4 * (2.0 * std::f64::consts::PI * (r + c) as f64 / period).cos()
            }))
            .unwrap()
        };
        let amp = |x: &SceneImage| {
            let r = approx_range_project(x, &h, &spec, 1e-3).unwrap();
            let inner = r.pixels().slice(ndarray::s![8..24, 8..24]).to_owned();
            let orig = x.pixels().slice(ndarray::s![8..24, 8..24]).to_owned();
            let dr = &inner - inner.mean().unwrap();
            let dx = &orig - orig.mean().unwrap();
            (dr.iter().map(|v| v * v).sum::<f64>() / dx.iter().map(|v| v * v).sum::<f64>()).sqrt()
        };
        let low = amp(&wave(16.0));
        let high = amp(&wave(2.0));
        assert!(low > 0.9, "low band kept {low}");
        assert!(high < 0.05, "high band kept {high}");
    }
}
