//! End-to-end command pipelines behind the `lensless` binary.
//!
//! Each command reads a [`PipelineConfig`], writes its artifacts below
//! `io.output_dir` and returns a summary. Outputs depend only on the config
//! and the inputs; item lists are processed in sorted name order.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{PipelineConfig, QuantScaleMode, ReconMethod, SolverName};
use crate::error::{invalid, Error, Result};
use crate::imaging::{
    build_matrix, conv_linear, replicate_pad, sv_forward, ForwardSpec, LinearOperator,
    Measurement, QuantScale, SceneImage, SvPsfModel, DENSE_LIMIT,
};
use crate::io::{read_csv, read_gray_image, read_psfset, write_csv, write_png_preview, write_psfset, GridFile};
use crate::maskdesign::{nfpr_optimize, perlin_contour_psf, ContourParams, NfprConfig};
use crate::metrics::{psnr, region_psnr, ssim, RegionSpec};
use crate::optics::{psf_similarity, simulate_psf, PhaseMask, PropagationSpec, Psf, SimilarityMode};
use crate::rangenull::{
    approx_range_project, null_complete, null_loss, pseudo_inverse, range_project, NullLossMode, RangeContent,
    DEFAULT_RCOND,
};
use crate::recon::{
    admm_tv, calibrate_kernels, svdeconv_apply, wiener_deconvolve, AdmmConfig, CalibConfig, CalibSolver, Calibration,
};

pub const MANIFEST: &str = "manifest.csv";
pub const CENTER_PSF: &str = "psf_center.pclg";

fn propagation(cfg: &PipelineConfig) -> Result<PropagationSpec> {
    PropagationSpec::new(cfg.optics.d, cfg.optics.lambda)
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p)?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Format(format!("bad {what} `{s}`")))
}

#[derive(Debug, Clone)]
pub struct DesignReport {
    pub mask_path: PathBuf,
    pub final_residual: f64,
    pub max_amplitude_error: f64,
}

/// Perlin-contour target, phase retrieval, and the achieved on-axis PSF.
pub fn design_mask(cfg: &PipelineConfig) -> Result<DesignReport> {
    let out = &cfg.io.output_dir;
    ensure_dir(out)?;
    let o = &cfg.optics;
    let c = &cfg.mask.contour;
    let params = ContourParams { level: c.level, band_width: c.band_width, noise_scale: c.noise_scale, blur_sigma: c.blur_sigma };
    let target = perlin_contour_psf(o.grid, o.grid, o.pitch, cfg.mask.seed, &params)?;
    let nfpr = nfpr_optimize(&target, &NfprConfig::new(cfg.mask.iterations, o.d, o.lambda, cfg.mask.seed)?)?;
    let achieved = simulate_psf(&nfpr.mask, 0.0, 0.0, &propagation(cfg)?)?.normalized()?;

    let mask_path = cfg.io.resolve(&cfg.io.mask);
    if let Some(dir) = mask_path.parent() {
        ensure_dir(dir)?;
    }
    GridFile::real(nfpr.mask.phase().clone(), o.pitch).write(&mask_path)?;
    GridFile::real(target.intensity().clone(), o.pitch).write(&out.join("target_psf.pclg"))?;
    GridFile::real(achieved.intensity().clone(), o.pitch).write(&out.join("achieved_psf.pclg"))?;
    write_png_preview(&out.join("target_psf.png"), target.intensity())?;
    write_png_preview(&out.join("achieved_psf.png"), achieved.intensity())?;
    let rows: Vec<Vec<String>> = nfpr.residuals.iter().enumerate().map(|(i, r)| vec![i.to_string(), fmt(*r)]).collect();
    write_csv(&out.join("nfpr_residuals.csv"), &["iteration", "residual"], &rows)?;
    Ok(DesignReport {
        mask_path,
        final_residual: *nfpr.residuals.last().expect("nonempty"),
        max_amplitude_error: nfpr.max_amplitude_error,
    })
}

pub fn load_mask(cfg: &PipelineConfig) -> Result<PhaseMask> {
    let path = cfg.io.resolve(&cfg.io.mask);
    let g = GridFile::read(&path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("mask {}: {io}", path.display()))),
        other => other,
    })?;
    let pitch = g.pitch;
    PhaseMask::new(g.into_real()?, pitch)
}

/// Parses a comma-separated list of angles in degrees.
pub fn parse_angles(list: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = list.split(',').map(|s| parse_f64(s, "angle")).collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(invalid("empty angle list"));
    }
    Ok(v)
}

/// Off-axis PSFs (tilt along x) and their similarity to the on-axis PSF.
pub fn psf_sweep(cfg: &PipelineConfig, angles_deg: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mask = load_mask(cfg)?;
    let spec = propagation(cfg)?;
    let dir = cfg.io.output_dir.join("sweep");
    ensure_dir(&dir)?;
    let reference = simulate_psf(&mask, 0.0, 0.0, &spec)?;
    let psfs: Vec<Psf> = angles_deg
        .par_iter()
        .map(|a| simulate_psf(&mask, a.to_radians(), 0.0, &spec))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut out = Vec::new();
    for (&a, p) in angles_deg.iter().zip(&psfs) {
        let sim = psf_similarity(&reference, p, SimilarityMode::Registered)?;
        let name = format!("psf_{a}deg");
        GridFile::real(p.intensity().clone(), p.pitch()).write(&dir.join(format!("{name}.pclg")))?;
        write_png_preview(&dir.join(format!("{name}.png")), p.intensity())?;
        rows.push(vec![fmt(a), fmt(sim)]);
        out.push((a, sim));
    }
    write_csv(&cfg.io.output_dir.join("similarity.csv"), &["angle_deg", "similarity"], &rows)?;
    Ok(out)
}

/// Block-sums a square grid by an integer factor.
pub fn bin_grid(a: &Array2<f64>, factor: usize) -> Result<Array2<f64>> {
    let (h, w) = a.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(invalid(format!("cannot bin {h}x{w} by {factor}")));
    }
    Ok(Array2::from_shape_fn((h / factor, w / factor), |(r, c)| {
        a.slice(s![r * factor..(r + 1) * factor, c * factor..(c + 1) * factor]).sum()
    }))
}

/// Field angles `(θx, θy)` in radians of the K×K region PSFs, row-major.
pub fn region_angles(k: usize, fov_deg: f64) -> Vec<(f64, f64)> {
    let axis: Vec<f64> = (0..k)
        .map(|i| if k == 1 { 0.0 } else { fov_deg * (2.0 * i as f64 / (k - 1) as f64 - 1.0) })
        .map(f64::to_radians)
        .collect();
    let mut out = Vec::with_capacity(k * k);
    for &ty in &axis {
        for &tx in &axis {
            out.push((tx, ty));
        }
    }
    out
}

/// Unit-energy PSF at the given field angle, binned to `psf_size`.
pub fn sensor_psf(mask: &PhaseMask, theta: (f64, f64), spec: &PropagationSpec, psf_size: usize) -> Result<Psf> {
    let raw = simulate_psf(mask, theta.0, theta.1, spec)?;
    let factor = raw.dim().0 / psf_size;
    Psf::new(bin_grid(raw.intensity(), factor)?, raw.pitch() * factor as f64)?.normalized()
}

/// Piecewise-constant test scene of rectangles and disks, clipped to `[0, 1]`.
///
/// Shape centers are drawn from a margin around the frame as wide as the
/// largest shape, so every pixel is equally likely to be covered.
pub fn synthetic_scene(size: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size as f64;
    let half_max = (n / 4.0).max(1.0);
    let mut x = Array2::<f64>::zeros((size, size));
    for _ in 0..rng.random_range(4..11) {
        let (cy, cx) = (rng.random_range(-half_max..n + half_max), rng.random_range(-half_max..n + half_max));
        let (hy, hx) = (rng.random_range(1.0..=half_max), rng.random_range(1.0..=half_max));
        let v = rng.random_range(0.1..0.6);
        for ((r, c), p) in x.indexed_iter_mut() {
            if (r as f64 - cy).abs() <= hy && (c as f64 - cx).abs() <= hx {
                *p += v;
            }
        }
    }
    let rad_max = (n / 4.0).max(1.0);
    for _ in 0..rng.random_range(1..4) {
        let (cy, cx) = (rng.random_range(-rad_max..n + rad_max), rng.random_range(-rad_max..n + rad_max));
        let rad = rng.random_range((rad_max / 5.0)..=rad_max);
        let v = rng.random_range(0.0..1.0);
        for ((r, c), p) in x.indexed_iter_mut() {
            if (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2) < rad * rad {
                *p = v;
            }
        }
    }
    x.mapv(|v| v.clamp(0.0, 1.0))
}

#[derive(Debug, Clone)]
pub enum SceneSource {
    /// Every `.pgm` / `.png` file of the directory.
    Directory(PathBuf),
    /// `count` synthetic scenes seeded from `forward.seed`.
    Synthetic(usize),
}

#[derive(Debug, Clone)]
pub struct SynthReport {
    pub written: usize,
    pub failures: Vec<(String, String)>,
}

fn collect_scenes(source: &SceneSource, cfg: &PipelineConfig) -> Result<(Vec<(String, Array2<f64>)>, Vec<(String, String)>)> {
    let n = cfg.forward.scene;
    match source {
        SceneSource::Synthetic(count) => Ok((
            (0..*count)
                .map(|i| (format!("scene_{i:04}"), synthetic_scene(n, cfg.forward.seed.wrapping_mul(1_000_003).wrapping_add(i as u64))))
                .collect(),
            Vec::new(),
        )),
        SceneSource::Directory(dir) => {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "png" | "PGM" | "PNG")))
                .collect();
            files.sort();
            let mut ok = Vec::new();
            let mut failed = Vec::new();
            for f in files {
                let name = f.file_stem().and_then(|s| s.to_str()).unwrap_or("scene").to_string();
                match read_gray_image(&f) {
                    Ok(img) if img.dim() == (n, n) => ok.push((name, img)),
                    Ok(img) => failed.push((name, format!("size {:?}, expected {n}x{n}", img.dim()))),
                    Err(e) => failed.push((name, e.to_string())),
                }
            }
            Ok((ok, failed))
        }
    }
}

pub fn forward_spec(cfg: &PipelineConfig, seed: u64, scale: QuantScale) -> ForwardSpec {
    let f = &cfg.forward;
    ForwardSpec {
        crop: Some((f.crop, f.crop)),
        pad_factor: f.pad_factor,
        noise_snr_db: Some(f.snr_db),
        quant_bits: Some(f.quant_bits),
        quant_scale: scale,
        seed,
    }
}

/// Spatially-varying measurements and Wiener range targets for each scene.
pub fn synthesize(cfg: &PipelineConfig, source: &SceneSource) -> Result<SynthReport> {
    let (scenes, mut failures) = collect_scenes(source, cfg)?;
    for (name, why) in &failures {
        log::warn!("skipping {name}: {why}");
    }
    if scenes.is_empty() {
        return Err(if failures.is_empty() {
            invalid("no inputs: the scene directory has no PGM/PNG files")
        } else {
            invalid(format!("no usable inputs ({} files rejected)", failures.len()))
        });
    }
    let f = &cfg.forward;
    let mask = load_mask(cfg)?;
    if mask.dim().0 % f.psf_size != 0 || mask.dim().1 != mask.dim().0 {
        return Err(Error::Config(format!("forward.psf_size {} must divide the square mask grid {:?}", f.psf_size, mask.dim())));
    }
    let spec = propagation(cfg)?;
    let angles = region_angles(f.k, f.fov_deg);
    let psfs: Vec<Psf> = angles.par_iter().map(|&t| sensor_psf(&mask, t, &spec, f.psf_size)).collect::<Result<_>>()?;
    let center = sensor_psf(&mask, (0.0, 0.0), &spec, f.psf_size)?;
    let model = SvPsfModel::new(psfs.clone(), f.k, (f.scene, f.scene))?;

    let scale = match f.quant_scale {
        QuantScaleMode::Capture => QuantScale::PerCapture,
        QuantScaleMode::Dataset => {
            let peak = scenes
                .par_iter()
                .map(|(_, x)| {
                    let a = model.apply_linear(x, Some((f.crop, f.crop)))?;
                    let b = conv_linear(x, &center, Some((f.crop, f.crop)))?;
                    Ok(a.iter().chain(b.iter()).copied().fold(0.0, f64::max))
                })
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            QuantScale::Fixed(if peak > 0.0 { peak } else { 1.0 })
        }
    };

    let root = cfg.io.resolve(&cfg.io.dataset);
    for sub in ["measurements", "targets", "scenes", "psfs"] {
        ensure_dir(&root.join(sub))?;
    }
    GridFile::real(center.intensity().clone(), center.pitch()).write(&root.join(CENTER_PSF))?;
    for (i, p) in psfs.iter().enumerate() {
        GridFile::real(p.intensity().clone(), p.pitch()).write(&root.join("psfs").join(format!("psf_{}_{}.pclg", i / f.k, i % f.k)))?;
    }

    let items: Vec<Result<Vec<String>>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, (name, x))| {
            let seed = f.seed.wrapping_add(i as u64);
            let spec = forward_spec(cfg, seed, scale);
            let scene = SceneImage::from_unit_range(x.clone())?;
            let y = sv_forward(&scene, &model, &spec)?;
            let target = approx_range_project(&scene, &center, &spec, cfg.recon.reg)?;
            let m = format!("measurements/{name}.pclg");
            let t = format!("targets/{name}.pclg");
            let sc = format!("scenes/{name}.pclg");
            GridFile::real(y.pixels().clone(), center.pitch()).write(&root.join(&m))?;
            GridFile::real(target.pixels().clone(), center.pitch()).write(&root.join(&t))?;
            GridFile::real(scene.pixels().clone(), center.pitch()).write(&root.join(&sc))?;
            Ok(vec![name.clone(), seed.to_string(), m, t, sc, f.quant_bits.to_string(), fmt(y.full_scale())])
        })
        .collect();
    let mut rows = Vec::new();
    for (r, (name, _)) in items.into_iter().zip(&scenes) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((name.clone(), e.to_string())),
        }
    }
    if rows.is_empty() {
        return Err(invalid("every scene failed to synthesize"));
    }
    write_csv(&root.join(MANIFEST), &["name", "seed", "measurement", "target", "scene", "bits", "full_scale"], &rows)?;
    Ok(SynthReport { written: rows.len(), failures })
}

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub name: String,
    pub seed: u64,
    pub measurement: Measurement,
    pub target: RangeContent,
    pub scene: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
    pub psf: Psf,
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let (header, rows) = read_csv(&root.join(MANIFEST))?;
    let expected = ["name", "seed", "measurement", "target", "scene", "bits", "full_scale"];
    if header != expected {
        return Err(Error::Format(format!("unexpected manifest header {header:?}")));
    }
    let g = GridFile::read(&root.join(CENTER_PSF))?;
    let pitch = g.pitch;
    let psf = Psf::new(g.into_real()?, pitch)?;
    let mut items = Vec::with_capacity(rows.len());
    for row in rows {
        if row.len() != expected.len() {
            return Err(Error::Format(format!("manifest row has {} fields", row.len())));
        }
        let bits: u8 = row[5].parse().map_err(|_| Error::Format(format!("bad bit depth `{}`", row[5])))?;
        let measurement = Measurement::from_counts(GridFile::read(&root.join(&row[2]))?.into_real()?, bits, parse_f64(&row[6], "full scale")?)?;
        items.push(DatasetItem {
            name: row[0].clone(),
            seed: row[1].parse().map_err(|_| Error::Format(format!("bad seed `{}`", row[1])))?,
            measurement,
            target: RangeContent::from_pixels(GridFile::read(&root.join(&row[3]))?.into_real()?),
            scene: GridFile::read(&root.join(&row[4]))?.into_real()?,
        });
    }
    if items.is_empty() {
        return Err(Error::Format("dataset manifest lists no pairs".into()));
    }
    items.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(Dataset { items, psf })
}

pub fn calib_config(cfg: &PipelineConfig) -> CalibConfig {
    let c = &cfg.recon.calib;
    CalibConfig {
        k: cfg.forward.k,
        reg: cfg.recon.reg,
        mu: c.mu,
        lr: c.lr,
        epochs: c.epochs,
        solver: match c.solver {
            SolverName::Gd => CalibSolver::GradientDescent,
            SolverName::Cg => CalibSolver::ConjugateGradient,
        },
    }
}

/// Fits the SVDeconv kernels on the configured dataset.
pub fn calibrate(cfg: &PipelineConfig) -> Result<Calibration> {
    let data = load_dataset(&cfg.io.resolve(&cfg.io.dataset))?;
    let pairs: Vec<(Measurement, RangeContent)> = data
        .items
        .iter()
        .map(|it| Ok((replicate_pad(&it.measurement, cfg.forward.pad_factor)?, it.target.clone())))
        .collect::<Result<_>>()?;
    let cal = calibrate_kernels(&pairs, &data.psf, &calib_config(cfg))?;
    let path = cfg.io.resolve(&cfg.io.psfset);
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    write_psfset(&path, &cal.psfs)?;
    let rows: Vec<Vec<String>> = cal.history.iter().map(|h| vec![h.epoch.to_string(), fmt(h.mse), fmt(h.objective)]).collect();
    write_csv(&cfg.io.output_dir.join("calib_loss.csv"), &["epoch", "mse", "objective"], &rows)?;
    Ok(cal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub center_psnr: f64,
    pub periphery_psnr: f64,
}

pub fn evaluate(name: &str, reference: &Array2<f64>, estimate: &Array2<f64>, region: &RegionSpec) -> Result<MetricRow> {
    let (center_psnr, periphery_psnr) = region_psnr(reference, estimate, region, 1.0)?;
    Ok(MetricRow {
        name: name.to_string(),
        psnr: psnr(reference, estimate, 1.0)?,
        ssim: ssim(reference, estimate, 1.0)?,
        center_psnr,
        periphery_psnr,
    })
}

fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.name.clone(), fmt(r.psnr), fmt(r.ssim), fmt(r.center_psnr), fmt(r.periphery_psnr)])
        .collect();
    write_csv(path, &["name", "psnr", "ssim", "center_psnr", "periphery_psnr"], &body)
}

/// Reconstructs every dataset measurement and scores it against its range
/// target.
pub fn reconstruct(cfg: &PipelineConfig, method: ReconMethod) -> Result<Vec<MetricRow>> {
    let data = load_dataset(&cfg.io.resolve(&cfg.io.dataset))?;
    let scene_dims = (cfg.forward.scene, cfg.forward.scene);
    let psfset = match method {
        ReconMethod::Svdeconv => {
            let path = cfg.io.resolve(&cfg.io.psfset);
            if !path.exists() {
                return Err(invalid(format!("svdeconv needs a calibrated PsfSet at {}; run `calibrate` first", path.display())));
            }
            Some(read_psfset(&path)?)
        }
        _ => None,
    };
    let weights = psfset.as_ref().map(|p| p.weights()).transpose()?;
    let admm = AdmmConfig {
        tv_weight: cfg.recon.admm.tv_weight,
        rho: cfg.recon.admm.rho,
        iterations: cfg.recon.admm.iterations,
        tolerance: cfg.recon.admm.tolerance,
        pad_factor: cfg.forward.pad_factor,
    };
    let region = RegionSpec::new(cfg.metrics.center_fraction)?;
    let label = match method {
        ReconMethod::Wiener => "wiener",
        ReconMethod::Admm => "admm",
        ReconMethod::Svdeconv => "svdeconv",
    };
    let dir = cfg.io.output_dir.join("recon").join(label);
    ensure_dir(&dir)?;
    let rows: Vec<MetricRow> = data
        .items
        .par_iter()
        .map(|it| {
            let est = match method {
                ReconMethod::Wiener => {
                    wiener_deconvolve(&replicate_pad(&it.measurement, cfg.forward.pad_factor)?, &data.psf, scene_dims, cfg.recon.reg)?
                }
                ReconMethod::Admm => admm_tv(&it.measurement, &data.psf, scene_dims, &admm)?.scene,
                ReconMethod::Svdeconv => svdeconv_apply(
                    &replicate_pad(&it.measurement, cfg.forward.pad_factor)?,
                    psfset.as_ref().expect("loaded"),
                    weights.as_ref().expect("loaded"),
                )?,
            };
            GridFile::real(est.pixels().clone(), data.psf.pitch()).write(&dir.join(format!("{}.pclg", it.name)))?;
            write_png_preview(&dir.join(format!("{}.png", it.name)), est.pixels())?;
            evaluate(&it.name, it.target.pixels(), est.pixels(), &region)
        })
        .collect::<Result<_>>()?;
    write_metrics(&cfg.io.output_dir.join(format!("metrics_{label}.csv")), &rows)?;
    Ok(rows)
}

fn load_grid_or_image(path: &Path) -> Result<Array2<f64>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pclg") => GridFile::read(path)?.into_real(),
        _ => read_gray_image(path),
    }
}

/// Scores every estimate against the reference file with the same stem.
pub fn metrics_report(cfg: &PipelineConfig, reference: &Path, estimate: &Path, out: &Path) -> Result<Vec<MetricRow>> {
    let region = RegionSpec::new(cfg.metrics.center_fraction)?;
    let mut names: Vec<(String, PathBuf)> = fs::read_dir(estimate)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pclg" | "pgm" | "png")))
        .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(|s| (s.to_string(), p.clone())))
        .collect();
    names.sort();
    names.dedup_by(|a, b| a.0 == b.0);
    let mut rows = Vec::new();
    for (stem, path) in names {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let refp = [ext, "pclg", "pgm", "png"].iter().map(|e| reference.join(format!("{stem}.{e}"))).find(|p| p.exists());
        let Some(refp) = refp else {
            log::warn!("no reference for {stem}");
            continue;
        };
        rows.push(evaluate(&stem, &load_grid_or_image(&refp)?, &load_grid_or_image(&path)?, &region)?);
    }
    if rows.is_empty() {
        return Err(invalid("no estimate/reference pairs found"));
    }
    write_metrics(out, &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorModel {
    /// Delta PSF, full sensor: the identity.
    Delta,
    /// Single blur PSF with a centered crop.
    Conv,
    /// K×K region PSFs with a centered crop.
    Sv,
}

#[derive(Debug, Clone, Copy)]
pub struct DecomposeOptions {
    pub scene_size: usize,
    pub model: OperatorModel,
    pub inject_fault: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.residual <= self.tolerance
    }
}

#[derive(Debug, Clone)]
pub struct DecomposeReport {
    pub rank: usize,
    pub scene_cells: usize,
    pub sensor_cells: usize,
    pub checks: Vec<CheckRow>,
}

impl DecomposeReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckRow::passed)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "operator {} x {} (rank {})\n{:<28} {:>12} {:>10}  status\n",
            self.sensor_cells, self.scene_cells, self.rank, "check", "residual", "tolerance"
        );
        for c in &self.checks {
            s += &format!(
                "{:<28} {:>12.3e} {:>10.0e}  {}\n",
                c.name,
                c.residual,
                c.tolerance,
                if c.passed() { "pass" } else { "FAIL" }
            );
        }
        s
    }
}

fn blob_psf(size: usize, rng: &mut ChaCha8Rng) -> Result<Psf> {
    let c = (size - 1) as f64 / 2.0;
    let spots: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64), rng.random_range(0.3..1.0)))
        .collect();
    let grid = Array2::from_shape_fn((size, size), |(r, q)| {
        let base = (-((r as f64 - c).powi(2) + (q as f64 - c).powi(2)) / (0.5 * size as f64)).exp();
        base + spots.iter().map(|&(y, x, a)| a * (-((r as f64 - y).powi(2) + (q as f64 - x).powi(2))).exp()).sum::<f64>()
    });
    Psf::new(grid, 1.0)?.normalized()
}

/// Explicit desk-scale operator used by the decomposition checks.
pub fn desk_operator(k: usize, opts: &DecomposeOptions) -> Result<LinearOperator> {
    let n = opts.scene_size;
    if n * n > DENSE_LIMIT {
        return Err(Error::TooLarge { size: n * n, limit: DENSE_LIMIT });
    }
    if n < 2 {
        return Err(invalid("scene size must be at least 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let psf_size = (n / 4).max(2) | 1;
    let dims = (n, n);
    // the sensor sees a centered window, so the operator is wide and has a null space
    let m = (3 * n / 4).max(1);
    let sensor = (m, m);
    match opts.model {
        OperatorModel::Delta => build_matrix(|x| conv_linear(x, &Psf::delta(), None), dims, dims),
        OperatorModel::Conv => {
            let h = blob_psf(psf_size, &mut rng)?;
            build_matrix(|x| conv_linear(x, &h, Some(sensor)), dims, sensor)
        }
        OperatorModel::Sv => {
            let k = k.clamp(1, n);
            let psfs = (0..k * k).map(|_| blob_psf(psf_size, &mut rng)).collect::<Result<Vec<_>>>()?;
            let model = SvPsfModel::new(psfs, k, dims)?;
            build_matrix(|x| model.apply_linear(x, Some(sensor)), dims, sensor)
        }
    }
}

fn rel(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Builds the explicit operator and runs the range/null invariant suite.
pub fn decompose(cfg: &PipelineConfig, opts: &DecomposeOptions) -> Result<DecomposeReport> {
    let op = desk_operator(cfg.forward.k, opts)?;
    let mut pinv = pseudo_inverse(&op, DEFAULT_RCOND)?;
    if opts.inject_fault {
        pinv = pinv.perturbed(1e-3, opts.seed ^ 0x5eed);
    }
    let a = op.matrix();
    let p = pinv.projector();
    let n = a.ncols();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut checks = vec![
        CheckRow { name: "penrose A A+ A = A", residual: rel((a * pinv.matrix() * a - a).norm(), a.norm()), tolerance: 1e-8 },
        CheckRow { name: "projector idempotent", residual: rel((p * p - p).norm(), p.norm()), tolerance: 1e-9 },
        CheckRow { name: "A (I - A+A) = 0", residual: rel((a * (&eye - p)).norm(), a.norm()), tolerance: 1e-9 },
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let dims = op.scene_dims();
    let mut random_scene = || SceneImage::new(Array2::from_shape_fn(dims, |_| rng.random_range(0.0..1.0)));
    let (mut orth, mut complete, mut consist, mut nl) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let x = random_scene()?;
        let proposal = random_scene()?;
        let r = range_project(&x, &pinv)?;
        let null_part = x.pixels() - r.pixels();
        let x2 = x.pixels().iter().map(|v| v * v).sum::<f64>();
        orth = orth.max(rel((r.pixels() * &null_part).sum().abs(), x2));
        let back = r.pixels() + &null_part;
        complete = complete.max(rel((&back - x.pixels()).iter().map(|v| v * v).sum::<f64>().sqrt(), x2.sqrt()));
        let ax = op.apply(x.pixels())?;
        let done = null_complete(&r, &proposal, &pinv)?;
        let diff = op.apply(done.pixels())? - &ax;
        let nax = ax.iter().map(|v| v * v).sum::<f64>().sqrt();
        consist = consist.max(rel(diff.iter().map(|v| v * v).sum::<f64>().sqrt(), nax));
        let v = proposal.pixels() - range_project(&proposal, &pinv)?.pixels();
        let zeros = Array2::zeros(dims);
        let v2 = proposal.pixels().iter().map(|q| q * q).sum::<f64>();
        nl = nl.max(rel(null_loss(&v, &zeros, &op, NullLossMode::Exact)?, v2 * a.norm().powi(2)));
    }
    checks.push(CheckRow { name: "range/null orthogonality", residual: orth, tolerance: 1e-9 });
    checks.push(CheckRow { name: "decomposition completeness", residual: complete, tolerance: 1e-12 });
    checks.push(CheckRow { name: "null completion consistency", residual: consist, tolerance: 1e-9 });
    checks.push(CheckRow { name: "null loss on null vectors", residual: nl, tolerance: 1e-18 });
    Ok(DecomposeReport { rank: pinv.rank(), scene_cells: n, sensor_cells: a.nrows(), checks })
}
