//! Command-line surface: dataset generation, training, prediction,
//! evaluation, and motion-matrix heatmap dumps.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mmvp_core::data::{generate_sequences, read_dataset, write_dataset, SequenceDataset};
use mmvp_core::metrics::evaluate_files;
use mmvp_core::train::{load_checkpoint, load_config, model_from_checkpoint, train};
use mmvp_core::viz::dump_heatmaps;

#[derive(Parser)]
#[command(name = "mmvp", version, about = "Motion-matrix video prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bouncing-sprites dataset
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seqs: usize,
        #[arg(long)]
        len: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        sprites: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Train a model from a TOML config
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict future frames for every sequence; output uses the dataset
    /// file format
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a prediction file against ground truth
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Number of observed frames the predictions follow
        #[arg(long)]
        t: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Render predicted motion matrices for one feature patch as PGM images
    DumpMatrices {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seq: usize,
        /// Grid position as h,w
        #[arg(long)]
        patch: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Gen {
            out,
            seqs,
            len,
            height,
            width,
            sprites,
            seed,
        } => {
            let ds = generate_sequences(seed, seqs, len, height, width, sprites)?;
            write_dataset(&ds, &out)?;
            println!(
                "wrote {seqs} sequences x {len} frames ({height}x{width}) to {}",
                out.display()
            );
        }
        Command::Train {
            config,
            data,
            val,
            out,
            resume,
        } => {
            let mut cfg = load_config(&config)
                .with_context(|| format!("loading config {}", config.display()))?;
            cfg.data = Some(data);
            cfg.val = Some(val);
            cfg.out = Some(out);
            print!("resolved config:\n{}", cfg.to_toml());
            let summary = train(&cfg, resume.as_deref(), &mut |line| println!("{line}"))?;
            println!(
                "done: {} epochs, final checkpoint {}",
                summary.epochs_run,
                summary.final_checkpoint.display()
            );
        }
        Command::Predict { ckpt, data, out } => {
            let ck = load_checkpoint(&ckpt)
                .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
            let model = model_from_checkpoint(&ck)?;
            let ds = read_dataset(&data)?;
            let cfg = &model.cfg;
            if ds.height as usize != cfg.height
                || ds.width as usize != cfg.width
                || ds.channels as usize != cfg.c_in
            {
                bail!(
                    "dataset {}x{}x{} does not match the checkpoint model {}x{}x{}",
                    ds.height,
                    ds.width,
                    ds.channels,
                    cfg.height,
                    cfg.width,
                    cfg.c_in
                );
            }
            if (ds.seq_len as usize) < cfg.t_obs {
                bail!(
                    "sequences of length {} are shorter than T = {}",
                    ds.seq_len,
                    cfg.t_obs
                );
            }
            let mut predictions = Vec::with_capacity(ds.num_sequences as usize);
            for i in 0..ds.num_sequences as usize {
                let frames = ds.frames_f32(i, 0, cfg.t_obs);
                predictions.push(model.predict_frames(&frames)?);
            }
            let out_ds = SequenceDataset::from_frames_f32(
                &predictions,
                ds.height,
                ds.width,
                ds.channels,
            );
            write_dataset(&out_ds, &out)?;
            println!(
                "wrote {} predicted sequences x {} frames to {}",
                out_ds.num_sequences,
                out_ds.seq_len,
                out.display()
            );
        }
        Command::Eval {
            pred,
            gt,
            t,
            report,
        } => {
            let pred_ds = read_dataset(&pred)?;
            let gt_ds = read_dataset(&gt)?;
            let r = evaluate_files(&pred_ds, &gt_ds, t, 1.0)?;
            std::fs::write(&report, r.to_toml())?;
            println!(
                "model: psnr={:.4} ssim={:.4} mse_sum={:.4}",
                r.model.full.psnr, r.model.full.ssim, r.model.full.mse_sum
            );
            println!(
                "baseline: psnr={:.4} ssim={:.4} mse_sum={:.4}",
                r.baseline.full.psnr, r.baseline.full.ssim, r.baseline.full.mse_sum
            );
            println!("report written to {}", report.display());
        }
        Command::DumpMatrices {
            ckpt,
            data,
            seq,
            patch,
            out,
        } => {
            let (h, w) = patch
                .split_once(',')
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
                .context("--patch expects h,w (e.g. 3,7)")?;
            let ck = load_checkpoint(&ckpt)?;
            let model = model_from_checkpoint(&ck)?;
            let ds = read_dataset(&data)?;
            let paths = dump_heatmaps(&model, &ds, seq, (h, w), &out)?;
            println!("wrote {} heatmaps to {}", paths.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
