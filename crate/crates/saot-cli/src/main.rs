//! `saot`: generate Darcy datasets, train the attention variants, and run
//! the analysis commands. Exit codes are a scripting contract: 0 success,
//! 2 validation or format problems, 3 numeric failures (divergence,
//! non-convergence, non-finite results).

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{data_root, parse_threads, RunConfig};

#[derive(Parser)]
#[command(name = "saot", version, about = "Spectral attention operator toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test datasets plus a reparseable config sidecar
    Generate {
        /// key = value config file; defaults documented in the README
        #[arg(long)]
        config: Option<PathBuf>,
        /// master seed override
        #[arg(long)]
        seed: Option<u64>,
        /// output directory (default: $SAOT_DATA_DIR, else .)
        #[arg(long)]
        out: Option<PathBuf>,
        /// extra key=value overrides, applied last
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train one variant; writes model.saotcp, metrics.csv, config.txt
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// dataset directory (default: $SAOT_DATA_DIR, else .)
        #[arg(long)]
        data: Option<PathBuf>,
        /// output directory
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// attention mixer: fa, wa, or sa
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// worker threads: a count, or auto
        #[arg(long)]
        threads: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train fa, wa, and sa on the same data; writes the ablation table
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Mean and per-sample relative-L2 of a checkpoint on a dataset (JSON)
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// dataset file
        #[arg(long)]
        data: PathBuf,
        /// JSON output path (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "1")]
        threads: String,
    },
    /// Radial energy spectra of ground truth and predictions (CSV)
    Spectrum {
        /// model checkpoint; repeat for a three-series comparison
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// sample index within the dataset
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "spectrum.csv")]
        out: PathBuf,
    },
    /// Evaluate one checkpoint across per-resolution test files (CSV)
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        /// directory holding test_{r}.saotds files (default: $SAOT_DATA_DIR)
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        resolutions: Vec<usize>,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        #[arg(long, default_value = "1")]
        threads: String,
    },
    /// Time the linear and Fourier mixers over token counts (CSV)
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192")]
        sizes: Vec<usize>,
        /// token width
        #[arg(long, default_value_t = 64)]
        dim: usize,
        /// timed repetitions per point; the median is reported
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
    },
}

fn load_config(
    path: Option<PathBuf>,
    seed: Option<u64>,
    variant: Option<String>,
    threads: Option<String>,
    epochs: Option<usize>,
    set: Vec<String>,
) -> saot_core::Result<RunConfig> {
    let mut config = RunConfig::load(path.as_deref())?;
    if let Some(s) = seed {
        config.set("seed", s)?;
    }
    if let Some(v) = variant {
        config.set("variant", v)?;
    }
    if let Some(t) = threads {
        config.set("threads", t)?;
    }
    if let Some(e) = epochs {
        config.set("epochs", e)?;
    }
    for pair in set {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            saot_core::Error::Config(format!("--set expects KEY=VALUE, got '{pair}'"))
        })?;
        config.set(key.trim(), value.trim())?;
    }
    Ok(config)
}

fn run(cli: Cli) -> saot_core::Result<()> {
    match cli.command {
        Command::Generate { config, seed, out, set } => {
            let c = load_config(config, seed, None, None, None, set)?;
            commands::generate(&c, data_root(out))
        }
        Command::Train { config, data, out, variant, seed, threads, epochs, set } => {
            let c = load_config(config, seed, variant, threads, epochs, set)?;
            commands::train_cmd(&c, data, out)
        }
        Command::Ablate { config, data, out, seed, threads, epochs, set } => {
            let c = load_config(config, seed, None, threads, epochs, set)?;
            commands::ablate_cmd(&c, data, out)
        }
        Command::Eval { checkpoint, data, out, threads } => {
            commands::eval_cmd(checkpoint, data, out, parse_threads(&threads)?)
        }
        Command::Spectrum { checkpoint, data, index, out } => {
            commands::spectrum_cmd(checkpoint, data, index, out)
        }
        Command::Sweep { checkpoint, data_dir, resolutions, out, threads } => {
            commands::sweep_cmd(checkpoint, data_dir, resolutions, out, parse_threads(&threads)?)
        }
        Command::Bench { sizes, dim, repeats, out } => {
            commands::bench_cmd(sizes, dim, repeats, out)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(if e.is_numeric() { 3 } else { 2 });
    }
}
