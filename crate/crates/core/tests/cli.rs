use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lensless::io::{psfset_to_bytes, read_csv, read_psfset, write_csv, write_pgm16, GridFile};
use lensless::pipeline::load_dataset;
use lensless::recon::PsfSet;
use ndarray::Array2;

const SMALL: &str = r#"[optics]
d = 1e-3
lambda = 532e-9
pitch = 6e-6
grid = 64

[mask]
seed = 3
iterations = 20

[mask.contour]
level = 0.5
band_width = 0.05
noise_scale = 8.0
blur_sigma = 1.0

[forward]
k = 2
scene = 16
psf_size = 16
crop = 24
pad_factor = 2
snr_db = 30.0
quant_bits = 12
quant_scale = "dataset"
fov_deg = 20.0
seed = 5

[recon]
method = "wiener"
reg = 1e-3

[recon.admm]
tv_weight = 1e-3
rho = 1.0
iterations = 20
tolerance = 1e-6

[recon.calib]
lr = 1.0
epochs = 5
mu = 1e-6
solver = "gd"

[metrics]
center_fraction = 0.5

[io]
output_dir = "out"
mask = "mask.pclg"
dataset = "dataset"
psfset = "psfset.pclk"
"#;

fn workdir(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("lensless.toml"), config).unwrap();
    dir
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lensless"))
        .current_dir(dir)
        .env_remove("PHOCOLENS_CONFIG")
        .arg("--config")
        .arg("lensless.toml")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn full_pipeline(dir: &Path) {
    ok(dir, &["design-mask"]);
    ok(dir, &["psf-sweep", "--angles", "0,10,20"]);
    ok(dir, &["synthesize", "--synthetic", "4"]);
    ok(dir, &["calibrate"]);
    for m in ["wiener", "admm", "svdeconv"] {
        ok(dir, &["reconstruct", "--method", m]);
    }
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let a = workdir(SMALL);
    let b = workdir(SMALL);
    full_pipeline(a.path());
    full_pipeline(b.path());
    let sa = snapshot(&a.path().join("out"));
    let sb = snapshot(&b.path().join("out"));
    assert!(sa.len() > 20);
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{} differs", k.display());
    }

    // csv contracts
    let (h, rows) = read_csv(&a.path().join("out/metrics_svdeconv.csv")).unwrap();
    assert_eq!(h, ["name", "psnr", "ssim", "center_psnr", "periphery_psnr"]);
    assert_eq!(rows.len(), 4);
    let (_, rows) = read_csv(&a.path().join("out/dataset/manifest.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    let (_, loss) = read_csv(&a.path().join("out/calib_loss.csv")).unwrap();
    let obj: Vec<f64> = loss.iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(obj.len(), 6);
    assert!(obj.windows(2).all(|w| w[1] <= w[0]));
    let text = fs::read_to_string(a.path().join("out/similarity.csv")).unwrap();
    assert!(!text.contains('\r'));

    // the calibrated container survives a read/write cycle unchanged
    let bytes = fs::read(a.path().join("out/psfset.pclk")).unwrap();
    let set = read_psfset(&a.path().join("out/psfset.pclk")).unwrap();
    assert_eq!(psfset_to_bytes(&set).unwrap(), bytes);
}

#[test]
fn missing_distance_is_a_config_error() {
    let cfg = SMALL.replacen("d = 1e-3\n", "", 1);
    let dir = workdir(&cfg);
    let out = run(dir.path(), &["design-mask"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`d`") || err.contains(" d"), "{err}");

    let dir = workdir(SMALL);
    let out = run(dir.path(), &["--set", "optics.bogus=1", "design-mask"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["reconstruct", "--method", "magic"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_row_counts() {
    let dir = workdir(SMALL);
    ok(dir.path(), &["design-mask"]);
    ok(dir.path(), &["psf-sweep", "--angles", "0"]);
    let (_, rows) = read_csv(&dir.path().join("out/similarity.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 1.0);

    ok(dir.path(), &["psf-sweep", "--angles", "0,15,30"]);
    let (_, rows) = read_csv(&dir.path().join("out/similarity.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    let sweep: Vec<_> = fs::read_dir(dir.path().join("out/sweep")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(sweep.iter().filter(|n| n.to_string_lossy().ends_with(".pclg")).count(), 3);
}

#[test]
fn sweep_without_mask_fails_at_runtime() {
    let dir = workdir(SMALL);
    let out = run(dir.path(), &["psf-sweep", "--angles", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synthesize_from_scene_directory() {
    let dir = workdir(SMALL);
    ok(dir.path(), &["design-mask"]);
    let scenes = dir.path().join("scenes");
    fs::create_dir(&scenes).unwrap();
    let out = run(dir.path(), &["synthesize", "--scenes", "scenes"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no inputs"));

    for i in 0..3 {
        let img = Array2::from_shape_fn((16, 16), |(r, c)| ((r * 7 + c * 3 + i * 11) % 17) as f64 * 200.0);
        write_pgm16(&scenes.join(format!("s{i}.pgm")), &img, 4095).unwrap();
    }
    fs::write(scenes.join("broken.pgm"), b"P5 nonsense").unwrap();
    let out = run(dir.path(), &["synthesize", "--scenes", "scenes"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken"));
    let (_, rows) = read_csv(&dir.path().join("out/dataset/manifest.csv")).unwrap();
    assert_eq!(rows.len(), 3);
}

#[test]
fn zero_epochs_keeps_the_wiener_initialization() {
    let dir = workdir(SMALL);
    ok(dir.path(), &["design-mask"]);
    ok(dir.path(), &["synthesize", "--synthetic", "2"]);
    ok(dir.path(), &["--set", "recon.calib.epochs=0", "calibrate"]);
    let data = load_dataset(&dir.path().join("out/dataset")).unwrap();
    let init = PsfSet::from_wiener(&data.psf, 2, (16, 16), (48, 48), 1e-3).unwrap();
    let stored = fs::read(dir.path().join("out/psfset.pclk")).unwrap();
    assert_eq!(psfset_to_bytes(&init).unwrap(), stored);
}

#[test]
fn svdeconv_without_calibration_is_explained() {
    let dir = workdir(SMALL);
    ok(dir.path(), &["design-mask"]);
    ok(dir.path(), &["synthesize", "--synthetic", "1"]);
    let out = run(dir.path(), &["reconstruct", "--method", "svdeconv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibrate"));
}

#[test]
fn diverging_calibration_reports_the_tail() {
    let dir = workdir(SMALL);
    ok(dir.path(), &["design-mask"]);
    ok(dir.path(), &["synthesize", "--synthetic", "2"]);
    let out = run(dir.path(), &["--set", "recon.calib.lr=100.0", "--set", "recon.calib.epochs=50", "calibrate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn wiener_on_noiseless_delta_data_is_capped() {
    let dir = workdir(SMALL);
    let root = dir.path().join("out/dataset");
    fs::create_dir_all(&root).unwrap();
    GridFile::real(Array2::from_elem((1, 1), 1.0), 6e-6).write(&root.join("psf_center.pclg")).unwrap();
    let mut rows = Vec::new();
    for i in 0..3u64 {
        let counts = Array2::from_shape_fn((16, 16), |(r, c)| ((r * 31 + c * 17 + i as usize * 5) % 4096) as f64);
        let scene = counts.mapv(|v| v / 4095.0);
        let m = format!("m{i}.pclg");
        let t = format!("t{i}.pclg");
        GridFile::real(counts, 6e-6).write(&root.join(&m)).unwrap();
        GridFile::real(scene.clone(), 6e-6).write(&root.join(&t)).unwrap();
        rows.push(vec![format!("img{i}"), i.to_string(), m, t.clone(), t, "12".into(), "1".into()]);
    }
    write_csv(&root.join("manifest.csv"), &["name", "seed", "measurement", "target", "scene", "bits", "full_scale"], &rows)
        .unwrap();
    let out = ok(dir.path(), &["--set", "recon.reg=0.0", "--set", "forward.crop=16", "reconstruct", "--method", "wiener"]);
    assert!(out.contains("3 images"));
    let (_, rows) = read_csv(&dir.path().join("out/metrics_wiener.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[1].parse::<f64>().unwrap() == 99.0));
}

#[test]
fn decompose_exit_codes() {
    let dir = workdir(SMALL);
    let out = ok(dir.path(), &["decompose", "--model", "delta", "--scene-size", "8"]);
    assert!(!out.contains("FAIL"));
    let out = ok(dir.path(), &["decompose", "--model", "sv", "--scene-size", "16"]);
    assert!(out.contains("null completion consistency"));
    assert!(!out.contains("FAIL"));
    let out = run(dir.path(), &["decompose", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
    let out = run(dir.path(), &["decompose", "--scene-size", "80"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn metrics_command_scores_matching_stems() {
    let dir = workdir(SMALL);
    let (r, e) = (dir.path().join("ref"), dir.path().join("est"));
    fs::create_dir_all(&r).unwrap();
    fs::create_dir_all(&e).unwrap();
    let a = Array2::from_shape_fn((16, 16), |(i, j)| ((i + j) % 5) as f64 / 4.0);
    GridFile::real(a.clone(), 1.0).write(&r.join("x.pclg")).unwrap();
    GridFile::real(a, 1.0).write(&e.join("x.pclg")).unwrap();
    ok(dir.path(), &["metrics", "--reference", "ref", "--estimate", "est", "--out", "m.csv"]);
    let (_, rows) = read_csv(&dir.path().join("m.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 99.0);
}
