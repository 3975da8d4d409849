use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use chromaprop::pipeline::{bench, colorize_dir, compare_dirs, write_synth, Mode, PipelineConfig, SynthKind, SynthSpec};

#[derive(Parser)]
#[command(name = "chromaprop", version, about = "Exemplar-based video colorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Colorize a directory (or glob) of grayscale frames from one color exemplar.
    Colorize {
        #[arg(long)]
        input: String,
        #[arg(long)]
        exemplar: PathBuf,
        /// File of `key = value` lines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one option, e.g. `--set gamma=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Write the final memory bank to this directory.
        #[arg(long)]
        dump_bank: Option<PathBuf>,
    },
    /// Measure memory and readout latency on a synthetic video.
    Bench {
        #[arg(long, default_value = "mfp")]
        mode: Mode,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        /// Frame size as HxW.
        #[arg(long, default_value = "448x448")]
        size: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Also write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a synthetic video with ground truth.
    Synth {
        #[arg(long, default_value = "translate")]
        kind: SynthKind,
        #[arg(long, default_value_t = 24)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "128x128")]
        size: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// PSNR and CDC of predicted frames against ground truth.
    Metrics {
        #[arg(long)]
        pred: String,
        #[arg(long)]
        gt: String,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s.split_once('x').context("size must look like HxW")?;
    Ok((w.trim().parse()?, h.trim().parse()?))
}

fn config(file: Option<&PathBuf>, set: &[String]) -> Result<PipelineConfig> {
    let mut cfg = match file {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    for kv in set {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got {kv:?}");
        };
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Colorize {
            input,
            exemplar,
            config: file,
            set,
            out,
            dump_bank,
        } => {
            let cfg = config(file.as_ref(), &set)?;
            let summary = colorize_dir(&input, &exemplar, &cfg, &out, dump_bank.as_deref())?;
            print!("{}", summary.report.to_kv());
        }
        Command::Bench {
            mode,
            frames,
            size,
            set,
            report,
        } => {
            let cfg = config(None, &set)?;
            let r = bench(mode, frames, parse_size(&size)?, &cfg)?;
            print!("{}", r.to_kv());
            if let Some(p) = report {
                std::fs::write(&p, r.to_json()).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Synth {
            kind,
            frames,
            out,
            size,
            seed,
        } => {
            let (w, h) = parse_size(&size)?;
            let spec = SynthSpec {
                seed,
                ..SynthSpec::new(kind, frames, w, h)
            };
            write_synth(&spec, &out)?;
        }
        Command::Metrics { pred, gt } => print!("{}", compare_dirs(&pred, &gt)?.to_kv()),
    }
    Ok(())
}
