//! Pipeline configuration: a TOML document with a strict schema.
//!
//! Every field is required and unknown keys are rejected. Lengths are in
//! meters, angles in degrees, SNR in dB. `--set section.key=value`
//! overrides are applied to the parsed document before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming a config file when no path is given.
pub const CONFIG_ENV: &str = "PHOCOLENS_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub optics: OpticsConfig,
    pub mask: MaskConfig,
    pub forward: ForwardConfig,
    pub recon: ReconConfig,
    pub metrics: MetricsConfig,
    pub io: IoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsConfig {
    /// Mask-to-sensor distance.
    pub d: f64,
    pub lambda: f64,
    pub pitch: f64,
    /// Mask grid side in cells.
    pub grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub seed: u64,
    pub iterations: usize,
    pub contour: ContourConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourConfig {
    pub level: f64,
    pub band_width: f64,
    pub noise_scale: f64,
    pub blur_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantScaleMode {
    /// Noise-free maximum over the whole dataset.
    Dataset,
    /// Noise-free maximum of each capture.
    Capture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    /// Region grid side.
    pub k: usize,
    /// Scene side in cells.
    pub scene: usize,
    /// Simulated PSFs are block-summed from the mask grid down to this side.
    pub psf_size: usize,
    /// Sensor side; a centered crop of the linear convolution output.
    pub crop: usize,
    pub pad_factor: usize,
    pub snr_db: f64,
    pub quant_bits: u8,
    pub quant_scale: QuantScaleMode,
    /// Field angle of the outer region PSFs.
    pub fov_deg: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconMethod {
    Wiener,
    Admm,
    Svdeconv,
}

impl std::str::FromStr for ReconMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wiener" => Ok(Self::Wiener),
            "admm" => Ok(Self::Admm),
            "svdeconv" => Ok(Self::Svdeconv),
            other => Err(Error::Config(format!("unknown method `{other}` (expected wiener, admm or svdeconv)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconConfig {
    pub method: ReconMethod,
    /// Wiener regularization, also used for range targets and kernel init.
    pub reg: f64,
    pub admm: AdmmSection,
    pub calib: CalibSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmmSection {
    pub tv_weight: f64,
    pub rho: f64,
    pub iterations: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverName {
    Gd,
    Cg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibSection {
    pub lr: f64,
    pub epochs: usize,
    pub mu: f64,
    pub solver: SolverName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub center_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    /// Root of all command outputs; relative paths below resolve against it.
    pub output_dir: PathBuf,
    pub mask: PathBuf,
    pub dataset: PathBuf,
    pub psfset: PathBuf,
}

impl IoConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.output_dir.join(p)
        }
    }
}

pub const DEFAULT_CONFIG: &str = r#"[optics]
d = 1e-3
lambda = 532e-9
pitch = 6e-6
grid = 256

[mask]
seed = 7
iterations = 200

[mask.contour]
level = 0.5
band_width = 0.05
noise_scale = 32.0
blur_sigma = 1.0

[forward]
k = 3
scene = 64
psf_size = 64
crop = 96
pad_factor = 2
snr_db = 30.0
quant_bits = 12
quant_scale = "dataset"
fov_deg = 20.0
seed = 1

[recon]
method = "wiener"
reg = 1e-3

[recon.admm]
tv_weight = 1e-3
rho = 1.0
iterations = 100
tolerance = 1e-6

[recon.calib]
lr = 1.0
epochs = 200
mu = 1e-10
solver = "gd"

[metrics]
center_fraction = 0.5

[io]
output_dir = "out"
mask = "mask.pclg"
dataset = "dataset"
psfset = "psfset.pclk"
"#;

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_CONFIG, &[]).expect("built-in config is valid")
    }
}

fn parse_override(item: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    // parse as a TOML literal, falling back to a bare string
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(doc: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut table = doc;
    for p in parents {
        table = table
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` is not a section")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl PipelineConfig {
    /// Parses a document, applies `key=value` overrides, then validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let (path, value) = parse_override(item)?;
            apply_override(&mut doc, &path, value)?;
        }
        let cfg: Self = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`, else the file named by `PHOCOLENS_CONFIG`, else the
    /// built-in defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match path.map(Path::to_path_buf).or(env) {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text, overrides).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
            None => Self::from_toml(DEFAULT_CONFIG, overrides),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        let o = &self.optics;
        if !(o.d > 0.0 && o.d.is_finite()) {
            return bad("optics.d", "must be a positive distance in meters");
        }
        if !(o.lambda > 0.0 && o.lambda.is_finite()) {
            return bad("optics.lambda", "must be a positive wavelength in meters");
        }
        if !(o.pitch > 0.0 && o.pitch.is_finite()) {
            return bad("optics.pitch", "must be positive");
        }
        if o.grid < 16 {
            return bad("optics.grid", "must be at least 16");
        }
        let c = &self.mask.contour;
        if !(c.band_width > 0.0 && c.noise_scale > 0.0 && c.blur_sigma >= 0.0) {
            return bad("mask.contour", "band_width and noise_scale must be positive, blur_sigma nonnegative");
        }
        let f = &self.forward;
        if f.k == 0 {
            return bad("forward.k", "must be at least 1");
        }
        if f.scene == 0 || f.psf_size == 0 {
            return bad("forward.scene", "scene and psf_size must be positive");
        }
        if o.grid % f.psf_size != 0 {
            return bad("forward.psf_size", "must divide optics.grid");
        }
        if f.crop == 0 || f.crop > f.scene + f.psf_size - 1 {
            return bad("forward.crop", "must lie in [1, scene + psf_size - 1]");
        }
        if f.crop * f.pad_factor < f.scene {
            return bad("forward.pad_factor", "padded sensor must cover the scene");
        }
        if f.pad_factor == 0 {
            return bad("forward.pad_factor", "must be at least 1");
        }
        if !(1..=16).contains(&f.quant_bits) {
            return bad("forward.quant_bits", "must lie in [1, 16]");
        }
        if !f.snr_db.is_finite() {
            return bad("forward.snr_db", "must be finite");
        }
        if !(f.fov_deg >= 0.0 && f.fov_deg < 90.0) {
            return bad("forward.fov_deg", "must lie in [0, 90)");
        }
        let r = &self.recon;
        if !(r.reg >= 0.0 && r.reg.is_finite()) {
            return bad("recon.reg", "must be nonnegative");
        }
        if !(r.admm.tv_weight > 0.0 && r.admm.rho > 0.0 && r.admm.iterations > 0) {
            return bad("recon.admm", "tv_weight and rho must be positive, iterations at least 1");
        }
        if !(r.calib.lr > 0.0 && r.calib.mu >= 0.0) {
            return bad("recon.calib", "lr must be positive and mu nonnegative");
        }
        let m = self.metrics.center_fraction;
        if !(m > 0.0 && m < 1.0) {
            return bad("metrics.center_fraction", "must lie in (0, 1)");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_round_trip() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.optics.d, 1e-3);
        assert_eq!(cfg.forward.k, 3);
        let again = PipelineConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn missing_field_is_named() {
        let text = DEFAULT_CONFIG.replace("d = 1e-3\n", "");
        let err = PipelineConfig::from_toml(&text, &[]).unwrap_err().to_string();
        assert!(err.contains("missing field `d`"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = DEFAULT_CONFIG.replace("[metrics]\n", "[metrics]\nbogus = 1\n");
        let err = PipelineConfig::from_toml(&text, &[]).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn overrides_apply_and_validate() {
        let cfg = PipelineConfig::from_toml(DEFAULT_CONFIG, &["forward.snr_db=25".into(), "recon.method=svdeconv".into()]).unwrap();
        assert_eq!(cfg.forward.snr_db, 25.0);
        assert_eq!(cfg.recon.method, ReconMethod::Svdeconv);
        assert!(PipelineConfig::from_toml(DEFAULT_CONFIG, &["optics.d=-1".into()]).is_err());
        assert!(PipelineConfig::from_toml(DEFAULT_CONFIG, &["nonsense".into()]).is_err());
    }
}
