//! C interface to the `lensless` toolkit.
//!
//! Every object crosses the boundary as an opaque handle that the caller
//! owns and releases with the matching `*_free`. Every fallible call
//! returns an [`LlStatus`]; on failure a message for the calling thread is
//! available from [`ll_last_error`] until the next failing call.
//!
//! Grids are row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lensless::imaging::{build_matrix, conv_linear, LinearOperator, Measurement, SceneImage};
use lensless::io::GridFile;
use lensless::maskdesign::{nfpr_optimize, perlin_contour_psf, ContourParams, NfprConfig};
use lensless::metrics::{psnr, ssim};
use lensless::optics::{psf_similarity, simulate_psf, PhaseMask, PropagationSpec, Psf, SimilarityMode};
use lensless::rangenull::{null_complete, pseudo_inverse, range_project, PseudoInverse, RangeContent};
use lensless::recon::wiener_deconvolve;
use lensless::Error;
use ndarray::Array2;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    TooLarge = 4,
    NonFinite = 5,
    Io = 6,
    Format = 7,
    Diverged = 8,
    Panic = 9,
    Other = 10,
}

/// Real 2-D grid with a sampling pitch in meters.
pub struct LlGrid {
    data: Array2<f64>,
    pitch: f64,
}

/// Phase-only mask.
pub struct LlMask(PhaseMask);

/// Point spread function.
pub struct LlPsf(Psf);

/// Explicit dense forward operator.
pub struct LlOperator(LinearOperator);

/// Pseudo-inverse and projector of an operator.
pub struct LlPinv(PseudoInverse);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LlStatus {
    match e {
        Error::InvalidArgument(_) | Error::EmptyContour | Error::Config(_) => LlStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => LlStatus::DimensionMismatch,
        Error::TooLarge { .. } => LlStatus::TooLarge,
        Error::NonFinite(_) => LlStatus::NonFinite,
        Error::Io(_) => LlStatus::Io,
        Error::Format(_) => LlStatus::Format,
        Error::Diverged { .. } => LlStatus::Diverged,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

type Outcome = std::result::Result<(), Fail>;

fn guard(f: impl FnOnce() -> Outcome) -> LlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LlStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            LlStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            LlStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> std::result::Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &'static str) -> Outcome {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T, what: &'static str) -> Outcome {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    unsafe { *out = value };
    Ok(())
}

unsafe fn path_of<'a>(p: *const c_char) -> std::result::Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail::Core(Error::InvalidArgument("path is not valid UTF-8".into())))?;
    Ok(Path::new(s))
}

fn grid(data: Array2<f64>, pitch: f64) -> LlGrid {
    LlGrid { data, pitch }
}

/// Message of the last failing call on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on the same thread.
#[unsafe(no_mangle)]
pub extern "C" fn ll_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[unsafe(no_mangle)]
pub extern "C" fn ll_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- grids ----

/// Copies `rows * cols` values from `data` into a new grid.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_grid_new(rows: usize, cols: usize, data: *const f64, pitch: f64, out: *mut *mut LlGrid) -> LlStatus {
    guard(|| {
        if data.is_null() {
            return Err(Fail::Null("data"));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("grid dimensions must be positive".into()).into());
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(Error::InvalidArgument("pitch must be positive".into()).into());
        }
        let n = rows.checked_mul(cols).ok_or(Error::TooLarge { size: usize::MAX, limit: usize::MAX })?;
        let values = unsafe { std::slice::from_raw_parts(data, n) }.to_vec();
        let a = Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        unsafe { put(out, grid(a, pitch), "out") }
    })
}

/// # Safety
/// `g` must be a live grid; `rows` and `cols` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_grid_dims(g: *const LlGrid, rows: *mut usize, cols: *mut usize) -> LlStatus {
    guard(|| {
        let g = unsafe { get(g, "grid") }?;
        let (r, c) = g.data.dim();
        unsafe {
            write(rows, r, "rows")?;
            write(cols, c, "cols")
        }
    })
}

/// # Safety
/// `g` must be a live grid; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_grid_pitch(g: *const LlGrid, out: *mut f64) -> LlStatus {
    guard(|| {
        let g = unsafe { get(g, "grid") }?;
        unsafe { write(out, g.pitch, "out") }
    })
}

/// Copies the grid into `buf`, which must hold exactly `len = rows * cols` values.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_grid_copy_to(g: *const LlGrid, buf: *mut f64, len: usize) -> LlStatus {
    guard(|| {
        let g = unsafe { get(g, "grid") }?;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        if len != g.data.len() {
            return Err(Error::InvalidArgument(format!("buffer holds {len} values, grid has {}", g.data.len())).into());
        }
        let dst = unsafe { std::slice::from_raw_parts_mut(buf, len) };
        for (d, s) in dst.iter_mut().zip(g.data.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Reads a real GridFile.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_grid_read(path: *const c_char, out: *mut *mut LlGrid) -> LlStatus {
    guard(|| {
        let f = GridFile::read(unsafe { path_of(path) }?)?;
        let pitch = f.pitch;
        unsafe { put(out, grid(f.into_real()?, pitch), "out") }
    })
}

/// # Safety
/// `g` must be a live grid and `path` a NUL-terminated string.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_grid_write(g: *const LlGrid, path: *const c_char) -> LlStatus {
    guard(|| {
        let g = unsafe { get(g, "grid") }?;
        GridFile::real(g.data.clone(), g.pitch).write(unsafe { path_of(path) }?)?;
        Ok(())
    })
}

/// # Safety
/// `g` must come from this library and not be used afterwards. NULL is ignored.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_grid_free(g: *mut LlGrid) {
    if !g.is_null() {
        drop(unsafe { Box::from_raw(g) });
    }
}

// ---- masks and PSFs ----

/// Wraps a phase map (radians) as a mask with the grid's pitch.
///
/// # Safety
/// `phase` must be a live grid; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_mask_from_phase(phase: *const LlGrid, out: *mut *mut LlMask) -> LlStatus {
    guard(|| {
        let g = unsafe { get(phase, "phase") }?;
        unsafe { put(out, LlMask(PhaseMask::new(g.data.clone(), g.pitch)?), "out") }
    })
}

/// Designs a square `n × n` mask for a seeded contour target by near-field
/// phase retrieval. `residual` (nullable) receives the final relative residual.
///
/// # Safety
/// `out` must be writable; `residual` may be NULL.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_mask_design(
    n: usize,
    pitch: f64,
    distance: f64,
    wavelength: f64,
    seed: u64,
    iterations: usize,
    out: *mut *mut LlMask,
    residual: *mut f64,
) -> LlStatus {
    guard(|| {
        let target = perlin_contour_psf(n, n, pitch, seed, &ContourParams::default())?;
        let r = nfpr_optimize(&target, &NfprConfig::new(iterations, distance, wavelength, seed)?)?;
        if !residual.is_null() {
            unsafe { *residual = *r.residuals.last().expect("at least one residual") };
        }
        unsafe { put(out, LlMask(r.mask), "out") }
    })
}

/// Copies the mask phase into a new grid.
///
/// # Safety
/// `m` must be a live mask; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_mask_phase(m: *const LlMask, out: *mut *mut LlGrid) -> LlStatus {
    guard(|| {
        let m = unsafe { get(m, "mask") }?;
        unsafe { put(out, grid(m.0.phase().clone(), m.0.pitch()), "out") }
    })
}

/// # Safety
/// `m` must come from this library and not be used afterwards. NULL is ignored.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_mask_free(m: *mut LlMask) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

/// PSF of the mask for a plane wave at `(theta_x, theta_y)` radians.
///
/// # Safety
/// `m` must be a live mask; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_psf_simulate(
    m: *const LlMask,
    theta_x: f64,
    theta_y: f64,
    distance: f64,
    wavelength: f64,
    out: *mut *mut LlPsf,
) -> LlStatus {
    guard(|| {
        let m = unsafe { get(m, "mask") }?;
        let spec = PropagationSpec::new(distance, wavelength)?;
        unsafe { put(out, LlPsf(simulate_psf(&m.0, theta_x, theta_y, &spec)?), "out") }
    })
}

/// Nonnegative intensity grid as a PSF.
///
/// # Safety
/// `g` must be a live grid; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_psf_from_grid(g: *const LlGrid, out: *mut *mut LlPsf) -> LlStatus {
    guard(|| {
        let g = unsafe { get(g, "grid") }?;
        unsafe { put(out, LlPsf(Psf::new(g.data.clone(), g.pitch)?), "out") }
    })
}

/// # Safety
/// `p` must be a live PSF; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_psf_intensity(p: *const LlPsf, out: *mut *mut LlGrid) -> LlStatus {
    guard(|| {
        let p = unsafe { get(p, "psf") }?;
        unsafe { put(out, grid(p.0.intensity().clone(), p.0.pitch()), "out") }
    })
}

/// Registered (shift-maximized) similarity of two PSFs of equal size.
///
/// # Safety
/// `a` and `b` must be live PSFs; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_psf_similarity(a: *const LlPsf, b: *const LlPsf, out: *mut f64) -> LlStatus {
    guard(|| {
        let (a, b) = unsafe { (get(a, "a")?, get(b, "b")?) };
        let s = psf_similarity(&a.0, &b.0, SimilarityMode::Registered)?;
        unsafe { write(out, s, "out") }
    })
}

/// # Safety
/// `p` must come from this library and not be used afterwards. NULL is ignored.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_psf_free(p: *mut LlPsf) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

// ---- operators and range/null machinery ----

/// Explicit matrix of linear convolution with `psf`, cropped to the centered
/// `crop_rows × crop_cols` sensor window.
///
/// # Safety
/// `psf` must be a live PSF; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_operator_conv(
    psf: *const LlPsf,
    scene_rows: usize,
    scene_cols: usize,
    crop_rows: usize,
    crop_cols: usize,
    out: *mut *mut LlOperator,
) -> LlStatus {
    guard(|| {
        let h = unsafe { get(psf, "psf") }?;
        let sensor = (crop_rows, crop_cols);
        let op = build_matrix(|x| conv_linear(x, &h.0, Some(sensor)), (scene_rows, scene_cols), sensor)?;
        unsafe { put(out, LlOperator(op), "out") }
    })
}

/// Number of sensor cells (`rows`) and scene cells (`cols`) of the matrix.
///
/// # Safety
/// `op` must be a live operator; `rows` and `cols` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_operator_shape(op: *const LlOperator, rows: *mut usize, cols: *mut usize) -> LlStatus {
    guard(|| {
        let op = unsafe { get(op, "operator") }?;
        unsafe {
            write(rows, op.0.matrix().nrows(), "rows")?;
            write(cols, op.0.matrix().ncols(), "cols")
        }
    })
}

/// # Safety
/// `op` and `x` must be live; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_operator_apply(op: *const LlOperator, x: *const LlGrid, out: *mut *mut LlGrid) -> LlStatus {
    guard(|| {
        let (op, x) = unsafe { (get(op, "operator")?, get(x, "x")?) };
        let y = op.0.apply(&x.data)?;
        unsafe { put(out, grid(y, x.pitch), "out") }
    })
}

/// # Safety
/// `op` must come from this library and not be used afterwards. NULL is ignored.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_operator_free(op: *mut LlOperator) {
    if !op.is_null() {
        drop(unsafe { Box::from_raw(op) });
    }
}

/// SVD pseudo-inverse; singular values below `rcond · σ_max` are dropped.
///
/// # Safety
/// `op` must be a live operator; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_pinv_new(op: *const LlOperator, rcond: f64, out: *mut *mut LlPinv) -> LlStatus {
    guard(|| {
        let op = unsafe { get(op, "operator") }?;
        unsafe { put(out, LlPinv(pseudo_inverse(&op.0, rcond)?), "out") }
    })
}

/// # Safety
/// `p` must be a live pseudo-inverse; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_pinv_rank(p: *const LlPinv, out: *mut usize) -> LlStatus {
    guard(|| {
        let p = unsafe { get(p, "pinv") }?;
        unsafe { write(out, p.0.rank(), "out") }
    })
}

/// Range content `A⁺A x`.
///
/// # Safety
/// `p` and `x` must be live; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_range_project(p: *const LlPinv, x: *const LlGrid, out: *mut *mut LlGrid) -> LlStatus {
    guard(|| {
        let (p, x) = unsafe { (get(p, "pinv")?, get(x, "x")?) };
        let r = range_project(&SceneImage::new(x.data.clone())?, &p.0)?;
        unsafe { put(out, grid(r.into_pixels(), x.pitch), "out") }
    })
}

/// `range + (I − A⁺A) proposal`.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_null_complete(
    p: *const LlPinv,
    range: *const LlGrid,
    proposal: *const LlGrid,
    out: *mut *mut LlGrid,
) -> LlStatus {
    guard(|| {
        let (p, r, q) = unsafe { (get(p, "pinv")?, get(range, "range")?, get(proposal, "proposal")?) };
        let done = null_complete(&RangeContent::from_pixels(r.data.clone()), &SceneImage::new(q.data.clone())?, &p.0)?;
        unsafe { put(out, grid(done.into_pixels(), r.pitch), "out") }
    })
}

/// # Safety
/// `p` must come from this library and not be used afterwards. NULL is ignored.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_pinv_free(p: *mut LlPinv) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

// ---- reconstruction and metrics ----

/// Wiener deconvolution of a sensor image on its own frame, cropped to the
/// centered `scene_rows × scene_cols` window.
///
/// # Safety
/// `y` and `psf` must be live; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_wiener_deconvolve(
    y: *const LlGrid,
    psf: *const LlPsf,
    scene_rows: usize,
    scene_cols: usize,
    reg: f64,
    out: *mut *mut LlGrid,
) -> LlStatus {
    guard(|| {
        let (y, h) = unsafe { (get(y, "y")?, get(psf, "psf")?) };
        let m = Measurement::from_intensity(y.data.clone())?;
        let x = wiener_deconvolve(&m, &h.0, (scene_rows, scene_cols), reg)?;
        unsafe { put(out, grid(x.into_pixels(), y.pitch), "out") }
    })
}

/// # Safety
/// `a` and `b` must be live grids; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_psnr(a: *const LlGrid, b: *const LlGrid, peak: f64, out: *mut f64) -> LlStatus {
    guard(|| {
        let (a, b) = unsafe { (get(a, "a")?, get(b, "b")?) };
        unsafe { write(out, psnr(&a.data, &b.data, peak)?, "out") }
    })
}

/// # Safety
/// `a` and `b` must be live grids; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn ll_ssim(a: *const LlGrid, b: *const LlGrid, peak: f64, out: *mut f64) -> LlStatus {
    guard(|| {
        let (a, b) = unsafe { (get(a, "a")?, get(b, "b")?) };
        unsafe { write(out, ssim(&a.data, &b.data, peak)?, "out") }
    })
}
