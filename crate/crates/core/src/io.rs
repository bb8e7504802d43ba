//! Binary grid containers, image files and CSV output.
//!
//! `GridFile` layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `PCLG` |
//! | 2     | version (1) |
//! | 2     | dtype: 0 = real64, 1 = complex128 |
//! | 4     | width |
//! | 4     | height |
//! | 8     | pitch (f64, meters) |
//! | …     | row-major payload; complex values as (re, im) pairs |
//!
//! `PsfSet` containers start with `PCLK`, version, K, scene and frame dims,
//! pitch and the K² focal centers, followed by K² complex `GridFile`s.
//! Dense operators start with `PCLA`, version, scene and sensor dims,
//! followed by the row-major f64 matrix (rows are sensor cells).

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::imaging::LinearOperator;
use crate::recon::PsfSet;

pub const GRID_MAGIC: &[u8; 4] = b"PCLG";
pub const PSFSET_MAGIC: &[u8; 4] = b"PCLK";
pub const OPERATOR_MAGIC: &[u8; 4] = b"PCLA";
pub const FORMAT_VERSION: u16 = 1;
const GRID_HEADER: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub enum GridData {
    Real(Array2<f64>),
    Complex(Array2<Complex64>),
}

impl GridData {
    pub fn dim(&self) -> (usize, usize) {
        match self {
            GridData::Real(a) => a.dim(),
            GridData::Complex(a) => a.dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub pitch: f64,
    pub data: GridData,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated data: need {n} bytes at offset {}", self.pos)));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != expected {
            return Err(Error::Format(format!("bad magic {m:?}, expected {:?}", std::str::from_utf8(expected).unwrap())));
        }
        let v = self.u16()?;
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn dims(&mut self) -> Result<(usize, usize)> {
        let w = self.u32()? as usize;
        let h = self.u32()? as usize;
        Ok((h, w))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_dims(out: &mut Vec<u8>, dims: (usize, usize)) -> Result<()> {
    for v in [dims.1, dims.0] {
        let v = u32::try_from(v).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

impl GridFile {
    pub fn real(data: Array2<f64>, pitch: f64) -> Self {
        Self { pitch, data: GridData::Real(data) }
    }

    pub fn complex(data: Array2<Complex64>, pitch: f64) -> Self {
        Self { pitch, data: GridData::Complex(data) }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (h, w) = self.data.dim();
        let mut out = Vec::with_capacity(GRID_HEADER + h * w * 16);
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let tag: u16 = match self.data {
            GridData::Real(_) => 0,
            GridData::Complex(_) => 1,
        };
        out.extend_from_slice(&tag.to_le_bytes());
        put_dims(&mut out, (h, w))?;
        out.extend_from_slice(&self.pitch.to_le_bytes());
        match &self.data {
            GridData::Real(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            GridData::Complex(a) => a.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        Ok(out)
    }

    fn parse(r: &mut Reader<'_>) -> Result<Self> {
        r.magic(GRID_MAGIC)?;
        let tag = r.u16()?;
        let (h, w) = r.dims()?;
        let pitch = r.f64()?;
        let n = h.checked_mul(w).ok_or_else(|| Error::Format("grid size overflow".into()))?;
        let data = match tag {
            0 => {
                let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("grid size overflow".into()))?)?;
                let v: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                GridData::Real(Array2::from_shape_vec((h, w), v).expect("length checked"))
            }
            1 => {
                let bytes = r.take(n.checked_mul(16).ok_or_else(|| Error::Format("grid size overflow".into()))?)?;
                let v: Vec<Complex64> = bytes
                    .chunks_exact(16)
                    .map(|c| Complex64::new(f64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap())))
                    .collect();
                GridData::Complex(Array2::from_shape_vec((h, w), v).expect("length checked"))
            }
            t => return Err(Error::Format(format!("unknown dtype tag {t}"))),
        };
        Ok(Self { pitch, data })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let g = Self::parse(&mut r)?;
        r.finish()?;
        Ok(g)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// The payload as a real grid; complex files are rejected.
    pub fn into_real(self) -> Result<Array2<f64>> {
        match self.data {
            GridData::Real(a) => Ok(a),
            GridData::Complex(_) => Err(Error::Format("expected a real grid, found complex".into())),
        }
    }

    pub fn into_complex(self) -> Result<Array2<Complex64>> {
        match self.data {
            GridData::Complex(a) => Ok(a),
            GridData::Real(_) => Err(Error::Format("expected a complex grid, found real".into())),
        }
    }
}

pub fn psfset_to_bytes(set: &PsfSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(PSFSET_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.k() as u32).to_le_bytes());
    put_dims(&mut out, set.scene_dims())?;
    put_dims(&mut out, set.frame_dims())?;
    out.extend_from_slice(&set.pitch().to_le_bytes());
    for &(u, v) in set.centers() {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in set.kernels() {
        out.extend(GridFile::complex(p.clone(), set.pitch()).to_bytes()?);
    }
    Ok(out)
}

pub fn psfset_from_bytes(bytes: &[u8]) -> Result<PsfSet> {
    let mut r = Reader::new(bytes);
    r.magic(PSFSET_MAGIC)?;
    let k = r.u32()? as usize;
    if k == 0 || k > 64 {
        return Err(Error::Format(format!("implausible K = {k}")));
    }
    let scene = r.dims()?;
    let frame = r.dims()?;
    let pitch = r.f64()?;
    let mut centers = Vec::with_capacity(k * k);
    for _ in 0..k * k {
        centers.push((r.f64()?, r.f64()?));
    }
    let mut kernels = Vec::with_capacity(k * k);
    for _ in 0..k * k {
        kernels.push(GridFile::parse(&mut r)?.into_complex()?);
    }
    r.finish()?;
    PsfSet::new(k, kernels, centers, scene, frame, pitch).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_psfset(path: &Path, set: &PsfSet) -> Result<()> {
    fs::write(path, psfset_to_bytes(set)?)?;
    Ok(())
}

pub fn read_psfset(path: &Path) -> Result<PsfSet> {
    psfset_from_bytes(&fs::read(path)?)
}

pub fn operator_to_bytes(op: &LinearOperator) -> Result<Vec<u8>> {
    let m = op.matrix();
    let mut out = Vec::with_capacity(24 + m.len() * 8);
    out.extend_from_slice(OPERATOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_dims(&mut out, op.scene_dims())?;
    put_dims(&mut out, op.sensor_dims())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn operator_from_bytes(bytes: &[u8]) -> Result<LinearOperator> {
    let mut r = Reader::new(bytes);
    r.magic(OPERATOR_MAGIC)?;
    let scene = r.dims()?;
    let sensor = r.dims()?;
    let (rows, cols) = (sensor.0 * sensor.1, scene.0 * scene.1);
    let payload = r.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| Error::Format("size overflow".into()))?)?;
    r.finish()?;
    let vals: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let m = DMatrix::from_row_slice(rows, cols, &vals);
    LinearOperator::new(m, scene, sensor).map_err(|e| Error::Format(e.to_string()))
}

/// Reads a grayscale PGM or PNG (8 or 16 bit) scaled to `[0, 1]`.
pub fn read_gray_image(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let out = match img {
        image::DynamicImage::ImageLuma16(buf) => Array2::from_shape_fn((h, w), |(r, c)| buf.get_pixel(c as u32, r as u32).0[0] as f64 / 65535.0),
        other => {
            if other.color().channel_count() > 2 {
                return Err(Error::Format(format!("{}: expected a grayscale image", path.display())));
            }
            let buf = other.to_luma8();
            Array2::from_shape_fn((h, w), |(r, c)| buf.get_pixel(c as u32, r as u32).0[0] as f64 / 255.0)
        }
    };
    Ok(out)
}

/// Writes counts (clamped to `[0, maxval]`) as a binary 16-bit PGM.
pub fn write_pgm16(path: &Path, values: &Array2<f64>, maxval: u16) -> Result<()> {
    let (h, w) = values.dim();
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    for &v in values {
        let q = v.round().clamp(0.0, maxval as f64) as u16;
        if maxval < 256 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// 8-bit min-max normalized PNG for visual inspection.
pub fn write_png_preview(path: &Path, values: &Array2<f64>) -> Result<()> {
    let (h, w) = values.dim();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let buf = image::GrayImage::from_fn(w as u32, h as u32, |c, r| {
        image::Luma([((values[[r as usize, c as usize]] - lo) / span * 255.0).round() as u8])
    });
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Format(e.to_string()))
}

/// Writes a CSV with LF line endings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(csv_err)?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::Format(e.to_string())
    }
}

/// Writes text to a file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
