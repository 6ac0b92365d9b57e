use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use noise_transfer::config::TrainConfig;
use noise_transfer::evaluation::format_metric;
use noise_transfer::pipeline::{self, MapSpec};

#[derive(Parser)]
#[command(
    version,
    about = "Noise transference denoising: synthesis, training and inference"
)]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Inference commands write next to their inputs
    /// when omitted.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crop patches from a directory of images and write training pairs.
    Synthesize {
        image_dir: PathBuf,
        /// Write evaluation pairs (AWGN of this std on [0, 1] scale, clean
        /// target) instead of training pairs.
        #[arg(long)]
        eval_sigma: Option<f64>,
    },
    /// Train on a manifest.
    Train {
        manifest: PathBuf,
        /// Continue from a checkpoint written with the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop before this iteration.
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Remove noise (target noise level zero).
    Denoise {
        checkpoint: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Re-render inputs at a target noise level.
    Transfer {
        checkpoint: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Constant noise level on [0, 1] scale, or a `.npy` map.
        #[arg(long)]
        map: MapSpec,
    },
    /// Denoise the pairs of a manifest and report PSNR/SSIM.
    Eval {
        checkpoint: PathBuf,
        manifest: PathBuf,
    },
    /// Train every ablation configuration.
    Ablate {
        manifest: PathBuf,
        /// Score each trained model on this evaluation manifest.
        #[arg(long)]
        eval_manifest: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synthesize {
            image_dir,
            eval_sigma,
        } => {
            let m = pipeline::synthesize::<f32>(&cfg, image_dir, &out_dir(&cli), *eval_sigma)?;
            println!("{} entries", m.entries.len());
        }
        Command::Train {
            manifest,
            resume,
            stop_at,
        } => {
            let t =
                pipeline::train::<f32>(&cfg, manifest, &out_dir(&cli), resume.as_deref(), *stop_at)
                    .context("training failed")?;
            println!("stopped at iteration {}", t.state().iteration);
        }
        Command::Denoise { checkpoint, inputs } => {
            let (gen, params) =
                pipeline::load_model::<f32>(checkpoint, cli.config.as_ref().map(|_| &cfg))?;
            for p in pipeline::denoise_files(&gen, &params, inputs, cli.out_dir.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::Transfer {
            checkpoint,
            inputs,
            map,
        } => {
            let (gen, params) =
                pipeline::load_model::<f32>(checkpoint, cli.config.as_ref().map(|_| &cfg))?;
            let outs = pipeline::transfer_files(
                &gen,
                &params,
                inputs,
                map,
                cfg.seed,
                cli.out_dir.as_deref(),
            )?;
            for p in outs {
                println!("{}", p.display());
            }
        }
        Command::Eval {
            checkpoint,
            manifest,
        } => {
            let ck = noise_transfer::checkpoint::Checkpoint::<f32>::load(checkpoint)?;
            let cfg = if cli.config.is_some() {
                ck.check_generator(&cfg.generator_config())?;
                cfg
            } else {
                ck.train.clone()
            };
            let gen = noise_transfer::generator::Generator::new(ck.generator.clone())?;
            let report_path = out_dir(&cli).join("report.csv");
            let report = pipeline::eval(&cfg, &gen, &ck.state.gen_params, manifest, &report_path)?;
            println!(
                "{} rows, mean psnr {}, mean ssim {} -> {}",
                report.rows.len(),
                report.mean_psnr().map(format_metric).unwrap_or_default(),
                report.mean_ssim().map(format_metric).unwrap_or_default(),
                report_path.display()
            );
        }
        Command::Ablate {
            manifest,
            eval_manifest,
        } => {
            let dir = out_dir(&cli);
            let runs = pipeline::ablate::<f32>(&cfg, manifest, &dir, eval_manifest.as_deref())?;
            println!(
                "{} runs -> {}",
                runs.len(),
                Path::new(&dir).join("ablation.csv").display()
            );
        }
    }
    Ok(())
}
