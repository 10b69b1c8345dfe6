//! Command-line front end. Each subcommand is one pipeline stage.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::write_report;
use crate::nn::{grad_check, UNetConfig};
use crate::pipeline;
use crate::raster::MaskRaster;
use crate::slide_io::open_slide;
use crate::synth::{cohort_specs, generate_slide, CohortOptions};

#[derive(Debug, Parser)]
#[command(name = "histoseg", version, about = "Tissue segmentation for IHC whole-slide images")]
pub struct Cli {
    /// Worker threads for tile and slide parallelism. Results do not depend on it.
    #[arg(long, global = true, env = "HISTOSEG_WORKERS")]
    pub workers: Option<usize>,

    /// Overrides the config seed; every random stream derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Pipeline config JSON (defaults when omitted).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort, one slide directory per slide.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        n: usize,
        /// Slide width at 10x.
        #[arg(long, default_value_t = 448)]
        width: usize,
        /// Slide height at 10x.
        #[arg(long, default_value_t = 448)]
        height: usize,
    },
    /// Cut training patches from every slide directory under --slides.
    Prepare {
        #[arg(long)]
        slides: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train a model; history.csv and split.json are written beside it.
    Train {
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict a whole-slide tissue mask.
    Predict {
        #[arg(long)]
        slide: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Score {slide_id}_pred.png files against ground truth and write report.json.
    Evaluate {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        slides_dir: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Render the TP/FN/FP overlay of a prediction.
    Overlay {
        #[arg(long)]
        slide: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Finite-difference check of the tiny network's gradients.
    Gradcheck {
        #[arg(long, default_value_t = crate::nn::gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Print the default config (or write it to --out).
    InitConfig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
        }
        _ => Ok(()),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth { out, n, width, height } => {
            let opts = CohortOptions {
                n_slides: n,
                width_10x: width,
                height_10x: height,
                seed: seed.unwrap_or(0),
            };
            for spec in cohort_specs(&opts) {
                generate_slide(&spec, &out.join(&spec.slide_id))?;
                println!("{}", spec.slide_id);
            }
        }
        Command::Prepare { slides, out, config } => {
            let cfg = load_config(config.config.as_deref(), seed)?;
            for idx in pipeline::prepare(&slides, &out, &cfg)? {
                println!("{} {} patches", idx.slide_id, idx.samples.len());
            }
        }
        Command::Train { patches, config, out } => {
            let cfg = load_config(Some(&config), seed)?;
            let t = pipeline::train(&patches, &out, &cfg)?;
            println!(
                "best epoch {} (stopped after {})",
                t.outcome.best_epoch, t.outcome.stopped_epoch
            );
        }
        Command::Predict { slide, model, out, config } => {
            let cfg = load_config(config.config.as_deref(), seed)?;
            let params = pipeline::load_model(&model, &cfg)?;
            let pred = pipeline::predict(&open_slide(&slide)?, &params, &cfg)?;
            ensure_parent(&out)?;
            pred.write_png(&out)?;
        }
        Command::Evaluate { pred_dir, slides_dir, report, config } => {
            let cfg = load_config(config.config.as_deref(), seed)?;
            let r = pipeline::evaluate(&pred_dir, &slides_dir, &cfg)?;
            ensure_parent(&report)?;
            write_report(&report, &r)?;
            println!(
                "n={} dice {:.4} ± {:.4}",
                r.cohort.n, r.cohort.dice_mean, r.cohort.dice_std
            );
        }
        Command::Overlay { slide, pred, out, config } => {
            let cfg = load_config(config.config.as_deref(), seed)?;
            let pred = MaskRaster::read_png(&pred)?;
            let img = pipeline::overlay(&open_slide(&slide)?, &pred, &cfg)?;
            ensure_parent(&out)?;
            img.write_png(&out)?;
        }
        Command::Gradcheck { tolerance } => {
            let r = grad_check(&UNetConfig::tiny(), seed.unwrap_or(0), tolerance)?;
            println!(
                "params {} max_rel_err {:.3e} max_abs_err {:.3e}",
                r.param_count, r.max_rel_err, r.max_abs_err
            );
            if !r.pass {
                return Err(Error::Validation(format!(
                    "max relative error {:.3e} exceeds {tolerance:e}",
                    r.max_rel_err
                )));
            }
        }
        Command::InitConfig { out } => {
            let mut cfg = PipelineConfig::default();
            if let Some(s) = seed {
                cfg.seed = s;
            }
            match out {
                Some(p) => {
                    ensure_parent(&p)?;
                    cfg.save(&p)?;
                }
                None => print!("{}", cfg.to_json()),
            }
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs it. Returns the exit code:
/// 0 on success, 1 on usage or validation errors, 2 on I/O errors.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let workers = cli.workers.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {workers} workers: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
