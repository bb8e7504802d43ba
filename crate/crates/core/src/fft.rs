//! Two-dimensional DFT helpers on row-major `ndarray` grids.
//!
//! Forward transforms are unnormalized; inverse transforms divide by the
//! number of cells, so `ifft2(fft2(a)) == a` up to round-off.

use std::cell::RefCell;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transform(a: &mut Array2<Complex64>, direction: FftDirection) {
    let (h, w) = a.dim();
    if h == 0 || w == 0 {
        return;
    }
    if !a.is_standard_layout() {
        *a = a.as_standard_layout().into_owned();
    }
    let (row_fft, col_fft) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft(w, direction), p.plan_fft(h, direction))
    });

    let data = a.as_slice_mut().expect("standard layout");
    row_fft.process(data);

    let mut cols = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for c in 0..w {
            cols[c * h + r] = data[r * w + c];
        }
    }
    col_fft.process(&mut cols);
    for c in 0..w {
        for r in 0..h {
            data[r * w + c] = cols[c * h + r];
        }
    }
}

/// In-place forward 2D DFT.
pub fn fft2(a: &mut Array2<Complex64>) {
    transform(a, FftDirection::Forward);
}

/// In-place inverse 2D DFT, normalized by `1/(h*w)`.
pub fn ifft2(a: &mut Array2<Complex64>) {
    transform(a, FftDirection::Inverse);
    let n = a.len() as f64;
    a.mapv_inplace(|z| z / n);
}

/// Forward DFT of a real grid zero-padded (at the bottom/right) to `dims`.
pub fn fft2_real_padded(a: &Array2<f64>, dims: (usize, usize)) -> Array2<Complex64> {
    let mut out = Array2::zeros(dims);
    let (h, w) = a.dim();
    for ((r, c), &v) in a.indexed_iter() {
        if r < dims.0 && c < dims.1 && r < h && c < w {
            out[[r, c]] = Complex64::new(v, 0.0);
        }
    }
    fft2(&mut out);
    out
}

pub fn fft2_real(a: &Array2<f64>) -> Array2<Complex64> {
    fft2_real_padded(a, a.dim())
}

/// Real part of the inverse DFT.
pub fn ifft2_real(mut a: Array2<Complex64>) -> Array2<f64> {
    ifft2(&mut a);
    a.mapv(|z| z.re)
}

/// Index of frequency `-k` on an `n`-point grid.
fn neg(k: usize, n: usize) -> usize {
    (n - k) % n
}

/// `Re F⁻¹(a)` and `Re F⁻¹(b)` from a single complex transform.
///
/// The inverse DFT of the Hermitian part of a spectrum is the real part of
/// its inverse DFT, so packing both Hermitian parts as `Ha + i·Hb` gives
/// the two real results in the real and imaginary parts.
pub fn ifft2_real_pair(a: &Array2<Complex64>, b: &Array2<Complex64>) -> (Array2<f64>, Array2<f64>) {
    assert_eq!(a.dim(), b.dim(), "paired spectra must share a shape");
    let (h, w) = a.dim();
    let (a, b) = (a.as_standard_layout(), b.as_standard_layout());
    let (sa, sb) = (a.as_slice().expect("standard layout"), b.as_slice().expect("standard layout"));
    let mut z = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        let nr = neg(r, h) * w;
        for c in 0..w {
            let (k, m) = (r * w + c, nr + neg(c, w));
            let (pa, qa) = (sa[k], sa[m]);
            let (pb, qb) = (sb[k], sb[m]);
            // Ha + i·Hb with H(x)(k) = (x(k) + conj(x(-k))) / 2
            z[k] = Complex64::new(pa.re + qa.re - pb.im + qb.im, pa.im - qa.im + pb.re + qb.re) * 0.5;
        }
    }
    let mut z = Array2::from_shape_vec((h, w), z).expect("shape");
    ifft2(&mut z);
    (z.mapv(|v| v.re), z.mapv(|v| v.im))
}

/// Forward DFTs of two real grids from a single complex transform.
pub fn fft2_real_pair(a: &Array2<f64>, b: &Array2<f64>) -> (Array2<Complex64>, Array2<Complex64>) {
    assert_eq!(a.dim(), b.dim(), "paired grids must share a shape");
    let (h, w) = a.dim();
    let mut z = Zip::from(a).and(b).map_collect(|&x, &y| Complex64::new(x, y));
    fft2(&mut z);
    let sz = z.as_slice().expect("standard layout");
    let mut fa = vec![Complex64::new(0.0, 0.0); h * w];
    let mut fb = fa.clone();
    for r in 0..h {
        let nr = neg(r, h) * w;
        for c in 0..w {
            let k = r * w + c;
            let (p, q) = (sz[k], sz[nr + neg(c, w)]);
            // A = (Z(k) + conj Z(-k)) / 2, B = (Z(k) - conj Z(-k)) / 2i
            fa[k] = Complex64::new(p.re + q.re, p.im - q.im) * 0.5;
            fb[k] = Complex64::new(p.im + q.im, q.re - p.re) * 0.5;
        }
    }
    (Array2::from_shape_vec((h, w), fa).expect("shape"), Array2::from_shape_vec((h, w), fb).expect("shape"))
}

/// DFT sample frequencies in cycles per unit of `spacing`, in FFT order.
pub fn fftfreq(n: usize, spacing: f64) -> Vec<f64> {
    let span = n as f64 * spacing;
    (0..n)
        .map(|i| {
            let k = if i <= (n - 1) / 2 { i as f64 } else { i as f64 - n as f64 };
            k / span
        })
        .collect()
}
