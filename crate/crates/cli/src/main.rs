mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Method, SweepOptions, TrainPaths};
use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Recursive KalmanNet experiments: dataset generation, training, evaluation
/// and heterogeneity sweeps.
///
/// Set RKN_THREADS to cap the number of worker threads.
#[derive(Debug, Parser)]
#[command(name = "rkn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Experiment config file (TOML). Built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Replace one config value, e.g. `--override dataset.train=2`. Repeatable.
    #[arg(long = "override", short = 'o', value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the train/val/test splits and write a dataset directory.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory [default: paths.dataset]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an RKN on a dataset directory, keeping the best-validation weights.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory [default: paths.dataset]
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint written after every epoch [default: paths.checkpoint]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Training history CSV [default: paths.history]
        #[arg(long)]
        history: Option<PathBuf>,
        /// Continue from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Do not print per-epoch progress.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Evaluate `okf`, `sokf` or an RKN checkpoint on the test split.
    Eval {
        /// `okf`, `sokf`, or a path to an RKN checkpoint.
        method: String,
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory [default: paths.dataset]
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory for report, consistency and gain CSVs [default: paths.out]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write SVG plots of the consistency curves and gain trace.
        #[arg(long)]
        svg: bool,
    },
    /// Evaluate baselines (and optionally RKN) over a list of heterogeneity levels.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated heterogeneity levels in dB, e.g. 20,30,40,50,60.
        #[arg(long, value_delimiter = ',', num_args = 0.., required = true)]
        nu: Vec<f64>,
        /// Output directory for sweep.csv, checkpoints and histories [default: paths.out]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train one RKN per level and include it in the table.
        #[arg(long)]
        train: bool,
        /// Read rkn_nu<ν>.ckpt files from this directory and include RKN rows.
        #[arg(long, conflicts_with = "train")]
        checkpoints: Option<PathBuf>,
        /// Do not print per-epoch progress.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Print report CSVs as one table and render consistency/gain CSVs as SVG.
    Report {
        /// Report, consistency or gain-trace CSV files.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Write the combined report rows to this CSV.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Write an SVG for every consistency or gain-trace CSV into this directory.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("RKN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "RKN_THREADS must be a positive integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("RKN_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = config.load()?;
            let out = out.unwrap_or_else(|| cfg.paths.dataset.clone());
            let fingerprint = commands::generate(&cfg, &out)?;
            println!("dataset written to {}", out.display());
            println!("fingerprint {fingerprint}");
        }
        Command::Train {
            config,
            dataset,
            checkpoint,
            history,
            resume,
            quiet,
        } => {
            let cfg = config.load()?;
            let dataset = dataset.unwrap_or_else(|| cfg.paths.dataset.clone());
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.paths.checkpoint.clone());
            let history = history.unwrap_or_else(|| cfg.paths.history.clone());
            let paths = TrainPaths {
                dataset: &dataset,
                checkpoint: &checkpoint,
                history: &history,
                resume: resume.as_deref(),
            };
            let state = commands::train(&cfg, &paths, quiet)?;
            println!(
                "best epoch {} (validation NLL {:.4}); checkpoint {}",
                state.best_epoch,
                state.best_val_nll,
                checkpoint.display()
            );
        }
        Command::Eval {
            method,
            config,
            dataset,
            out,
            svg,
        } => {
            let cfg = config.load()?;
            let dataset = dataset.unwrap_or_else(|| cfg.paths.dataset.clone());
            let out = out.unwrap_or_else(|| cfg.paths.out.clone());
            let report = commands::eval(&Method::parse(&method), &dataset, &out, svg)?;
            println!("{}", commands::format_table(&[report.row()]));
            println!("written to {}", out.display());
        }
        Command::Sweep {
            config,
            nu,
            out,
            train,
            checkpoints,
            quiet,
        } => {
            let cfg = config.load()?;
            let out = out.unwrap_or_else(|| cfg.paths.out.clone());
            let opts = SweepOptions {
                nu_list: &nu,
                out: &out,
                train,
                checkpoint_dir: checkpoints.as_deref(),
                quiet,
            };
            let rows = commands::sweep(&cfg, &opts)?;
            println!("{}", commands::format_table(&rows));
            println!("written to {}", out.join("sweep.csv").display());
        }
        Command::Report { files, table, svg } => report(&files, table.as_deref(), svg.as_deref())?,
    }
    Ok(())
}

fn report(files: &[PathBuf], table: Option<&Path>, svg: Option<&Path>) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for f in files {
        match commands::read_report_rows(f) {
            Ok(r) => rows.extend(r),
            Err(not_report) => match svg {
                Some(dir) => {
                    let path = commands::plot_csv(f, dir).map_err(|_| not_report)?;
                    println!("plot {}", path.display());
                }
                None => return Err(not_report),
            },
        }
    }
    if !rows.is_empty() {
        println!("{}", commands::format_table(&rows));
    }
    if let Some(path) = table {
        commands::write_rows(path, &rows)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
