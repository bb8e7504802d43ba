use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lensless::config::{PipelineConfig, ReconMethod, DEFAULT_CONFIG};
use lensless::pipeline::{self, DecomposeOptions, OperatorModel, SceneSource};
use lensless::Error;

#[derive(Parser)]
#[command(name = "lensless", version, about = "Lensless camera simulation and reconstruction pipelines")]
struct Cli {
    /// Config file (TOML). Falls back to $PHOCOLENS_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. `--set forward.snr_db=25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design a phase mask for a Perlin-contour target PSF.
    DesignMask,
    /// Simulate off-axis PSFs of the designed mask and report similarities.
    PsfSweep {
        /// Comma-separated incidence angles in degrees.
        #[arg(long, default_value = "0,5,10,15,20,25,30", allow_hyphen_values = true)]
        angles: String,
    },
    /// Simulate spatially-varying measurements and range-content targets.
    Synthesize {
        /// Directory of grayscale PGM/PNG scenes.
        #[arg(long, conflicts_with = "synthetic")]
        scenes: Option<PathBuf>,
        /// Generate this many piecewise-constant scenes instead.
        #[arg(long)]
        synthetic: Option<usize>,
    },
    /// Fit the spatially-varying deconvolution kernels on the dataset.
    Calibrate,
    /// Reconstruct the dataset and score it against the range targets.
    Reconstruct {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Check range/null-space identities on an explicit desk-scale operator.
    Decompose {
        #[arg(long, default_value_t = 8)]
        scene_size: usize,
        #[arg(long, value_enum, default_value_t = ModelArg::Sv)]
        model: ModelArg,
        /// Perturb the pseudo-inverse to confirm the checks can fail.
        #[arg(long)]
        inject_fault: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score estimates against references matched by file stem.
    Metrics {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        /// Output CSV; defaults to `<output_dir>/metrics.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the built-in default configuration.
    DefaultConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Wiener,
    Admm,
    Svdeconv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Delta,
    Conv,
    Sv,
}

fn run(cli: Cli) -> lensless::Result<bool> {
    if let Command::DefaultConfig = cli.command {
        print!("{DEFAULT_CONFIG}");
        return Ok(true);
    }
    let cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::DesignMask => {
            let r = pipeline::design_mask(&cfg)?;
            println!("mask written to {}", r.mask_path.display());
            println!("final residual {:.4e}, max amplitude error {:.1e}", r.final_residual, r.max_amplitude_error);
        }
        Command::PsfSweep { angles } => {
            let angles = pipeline::parse_angles(&angles).map_err(|e| Error::Config(e.to_string()))?;
            for (a, s) in pipeline::psf_sweep(&cfg, &angles)? {
                println!("{a:>8.2} deg  similarity {s:.4}");
            }
        }
        Command::Synthesize { scenes, synthetic } => {
            let source = match (scenes, synthetic) {
                (Some(dir), None) => SceneSource::Directory(dir),
                (None, Some(n)) => SceneSource::Synthetic(n),
                _ => return Err(Error::Config("give either --scenes DIR or --synthetic N".into())),
            };
            let r = pipeline::synthesize(&cfg, &source)?;
            for (name, why) in &r.failures {
                eprintln!("skipped {name}: {why}");
            }
            println!("wrote {} pairs to {}", r.written, cfg.io.resolve(&cfg.io.dataset).display());
        }
        Command::Calibrate => {
            let cal = pipeline::calibrate(&cfg)?;
            let first = cal.history.first().expect("nonempty");
            let last = cal.history.last().expect("nonempty");
            println!("objective {:.6e} -> {:.6e} over {} epochs", first.objective, last.objective, last.epoch);
        }
        Command::Reconstruct { method } => {
            let method = match method {
                Some(MethodArg::Wiener) => ReconMethod::Wiener,
                Some(MethodArg::Admm) => ReconMethod::Admm,
                Some(MethodArg::Svdeconv) => ReconMethod::Svdeconv,
                None => cfg.recon.method,
            };
            let rows = pipeline::reconstruct(&cfg, method)?;
            let n = rows.len() as f64;
            let mean = |f: fn(&pipeline::MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
            println!(
                "{} images: psnr {:.2} dB, ssim {:.4}, center {:.2} dB, periphery {:.2} dB",
                rows.len(),
                mean(|r| r.psnr),
                mean(|r| r.ssim),
                mean(|r| r.center_psnr),
                mean(|r| r.periphery_psnr)
            );
        }
        Command::Decompose { scene_size, model, inject_fault, seed } => {
            let model = match model {
                ModelArg::Delta => OperatorModel::Delta,
                ModelArg::Conv => OperatorModel::Conv,
                ModelArg::Sv => OperatorModel::Sv,
            };
            let opts = DecomposeOptions { scene_size, model, inject_fault, seed };
            let report = match pipeline::decompose(&cfg, &opts) {
                Err(Error::TooLarge { size, limit }) => {
                    return Err(Error::Config(format!(
                        "{size} scene cells exceed the dense limit of {limit}; use --scene-size 64 or less"
                    )))
                }
                other => other?,
            };
            print!("{}", report.table());
            return Ok(report.passed());
        }
        Command::Metrics { reference, estimate, out } => {
            let out = out.unwrap_or_else(|| cfg.io.output_dir.join("metrics.csv"));
            if let Some(dir) = out.parent() {
                std::fs::create_dir_all(dir)?;
            }
            let rows = pipeline::metrics_report(&cfg, &reference, &estimate, &out)?;
            println!("scored {} images into {}", rows.len(), out.display());
        }
        Command::DefaultConfig => unreachable!(),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
