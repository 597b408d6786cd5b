//! `pabayes` — simulate, beamform, train, predict, calibrate, and
//! confidence-process photoacoustic reconstructions with uncertainty maps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pabayes::config::RunConfig;
use pabayes::pipeline;

#[derive(Parser)]
#[command(name = "pabayes", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON); desk-scale defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-image work (results are jobs-independent).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl Common {
    fn load(&self) -> pabayes::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.predict.seed = seed;
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantoms, raw channel data and MC volumes.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Dataset output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Beamform a raw channel file (MC volume + DAS image).
    Beamform {
        #[command(flatten)]
        common: Common,
        /// Raw channel TNSR file [elements, samples].
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fiber-average an experimental frame [samples, elements, fibers], then beamform.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network on a simulated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo-dropout prediction into posterior bundles.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory, directory of MC volumes, or a single volume.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's Monte-Carlo pass count.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Calibration + image metrics report over posterior bundles.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        posteriors: PathBuf,
        /// Dataset directory with ground truth; omit for uncertainty-only reports.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Report output path (JSON; bins CSV written next to it).
        #[arg(long)]
        out: PathBuf,
    },
    /// Confidence processing of one posterior bundle.
    Confidence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated descending SD/M thresholds for a sweep.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
    },
    /// Verify analytic gradients of all three losses against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Negative control: corrupt one gradient and expect failure.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

fn run() -> pabayes::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { common, out } => {
            let cfg = common.load()?;
            let manifest = pipeline::cmd_simulate(&cfg, &out, common.jobs)?;
            println!(
                "simulated {} images ({} train / {} val / {} test) into {}",
                manifest.count,
                manifest.train_idx.len(),
                manifest.val_idx.len(),
                manifest.test_idx.len(),
                out.display()
            );
        }
        Command::Beamform { common, raw, out } => {
            let cfg = common.load()?;
            pipeline::cmd_beamform(&cfg, &raw, &out)?;
            println!("beamformed {} into {}", raw.display(), out.display());
        }
        Command::Ingest { common, raw, out } => {
            let cfg = common.load()?;
            pipeline::cmd_ingest(&cfg, &raw, &out)?;
            println!("ingested {} into {}", raw.display(), out.display());
        }
        Command::Train {
            common,
            dataset,
            out,
        } => {
            let cfg = common.load()?;
            let (best, logs) = pipeline::cmd_train(&cfg, &dataset, &out, |log| {
                eprintln!(
                    "epoch {:4}  train {:.4}  val {:.4}  ({:.1}s)",
                    log.epoch, log.train_loss, log.val_loss, log.seconds
                );
            })?;
            println!(
                "best epoch {} (val loss {:.6}) after {} epochs -> {}",
                best.epoch,
                best.best_val_loss,
                logs.len(),
                out.display()
            );
        }
        Command::Predict {
            common,
            ckpt,
            input,
            out,
            k,
        } => {
            let mut cfg = common.load()?;
            if let Some(k) = k {
                cfg.predict.k = k;
            }
            let n = pipeline::cmd_predict(&cfg, &ckpt, &input, &out, common.jobs)?;
            println!(
                "predicted {n} posterior bundle(s) (K={}) into {}",
                cfg.predict.k,
                out.display()
            );
        }
        Command::Calibrate {
            common,
            posteriors,
            dataset,
            out,
        } => {
            let cfg = common.load()?;
            let report = pipeline::cmd_calibrate(&cfg, &posteriors, dataset.as_deref(), &out)?;
            if let Some(acc) = &report.segmentation_accuracy {
                println!("segmentation accuracy {:.4} ({:.4})", acc.mean, acc.std);
            }
            if let Some(psnr) = &report.image_psnr_db {
                println!("image PSNR {:.4} dB ({:.4})", psnr.mean, psnr.std);
            }
            if let Some(pooled) = &report.pooled_reliability {
                println!(
                    "pooled reliability cc {:?} slope {:?} over {} pixels",
                    pooled.cc, pooled.slope, pooled.total_pixels
                );
            }
            println!("report -> {}", out.display());
        }
        Command::Confidence {
            common,
            posterior,
            out,
            sweep,
        } => {
            let cfg = common.load()?;
            let n = pipeline::cmd_confidence(&cfg, &posterior, sweep.as_deref(), &out)?;
            println!("wrote {n} confident image(s) into {}", out.display());
        }
        Command::Gradcheck { common, corrupt } => {
            let cfg = common.load()?;
            let (report, passed) = pipeline::cmd_gradcheck(&cfg, corrupt)?;
            print!("{report}");
            if !passed {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
