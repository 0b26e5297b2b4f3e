//! Command-line front end for the gradient-inversion laboratory. All verbs
//! read a TOML experiment config, accept flag overrides, and write
//! deterministic artifacts (CSV, JSON, image/spike dumps, a manifest) into an
//! output directory.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod inspect;
pub mod report;

use config::Overrides;

/// CLI failures carry the process exit code. 2 means the run never started
/// (bad config), 3 means inputs or artifacts were unreadable, 4 means the
/// experiment ran but every sample diverged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    AllDiverged,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Config, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Data, message: message.into() }
    }

    pub fn all_diverged(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::AllDiverged, message: message.into() }
    }

    pub fn from_config(e: spikeleak::Error) -> Self {
        CliError::config(e.to_string())
    }

    pub fn from_data(e: spikeleak::Error) -> Self {
        CliError::data(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::AllDiverged => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            ErrorKind::Config => "config error",
            ErrorKind::Data => "data error",
            ErrorKind::AllDiverged => "diverged",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Parser, Debug)]
#[command(name = "spikeleak", about = "Gradient inversion against ANN and SNN federated clients")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every experiment verb. Flags override config values.
#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Master seed (overrides config and SPIKELEAK_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Sample-level worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Record wall-clock times in the wall_ms column (off by default so
    /// reruns are byte-identical).
    #[arg(long)]
    timing: bool,
    /// Dataset kind: idx | cifar | gesture.
    #[arg(long)]
    dataset: Option<String>,
    /// Dataset directory (idx/cifar).
    #[arg(long, value_name = "DIR")]
    dataset_path: Option<PathBuf>,
    /// Synthetic stream count per split (gesture).
    #[arg(long)]
    dataset_count: Option<usize>,
    /// Victim model kind: ann | snn.
    #[arg(long)]
    model: Option<String>,
    /// SNN simulation length.
    #[arg(long)]
    timesteps: Option<usize>,
    /// Judge checkpoint path.
    #[arg(long, value_name = "FILE")]
    judge_checkpoint: Option<PathBuf>,
    /// Attack kind: dlg | idlg | grnn.
    #[arg(long)]
    attack: Option<String>,
    /// Number of victim samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Attack iteration budget.
    #[arg(long)]
    iterations: Option<usize>,
    /// Spike threshold for thresholded runs.
    #[arg(long)]
    tau: Option<f64>,
    /// Thresholding strategy: none | post | in.
    #[arg(long)]
    strategy: Option<String>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            workers: self.workers,
            timing: self.timing,
            dataset_kind: self.dataset.clone(),
            dataset_path: self.dataset_path.clone(),
            dataset_count: self.dataset_count,
            model_kind: self.model.clone(),
            timesteps: self.timesteps,
            judge_checkpoint: self.judge_checkpoint.clone(),
            judge_epochs: None,
            judge_lr: None,
            attack_kind: self.attack.clone(),
            samples: self.samples,
            iterations: self.iterations,
            tau: self.tau,
            strategy: self.strategy.clone(),
        }
    }
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad tau '{p}': {e}")))
        .collect()
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the downstream judge and write its checkpoint.
    TrainJudge {
        #[command(flatten)]
        common: CommonArgs,
        /// Training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Learning rate.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Reconstruct training inputs from intercepted gradients.
    Attack {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Grid the spike threshold against both thresholding strategies.
    SweepTau {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated threshold grid.
        #[arg(long, value_parser = parse_f64_list, default_value = "0.1,0.25,0.5,0.75,0.9,0.95")]
        taus: Vec<f64>,
        /// Comma-separated strategies (post,in).
        #[arg(long, default_value = "post,in")]
        strategies: String,
    },
    /// Reference intra/inter-class distance table for the spike dataset.
    RefStats {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Identify and pretty-print a serialized artifact.
    Inspect {
        /// File to inspect.
        path: PathBuf,
    },
}

fn parse_strategies(
    s: &str,
) -> Result<Vec<spikeleak::attacks::ThresholdStrategy>, CliError> {
    s.split(',')
        .map(|p| config::parse_strategy(p.trim()))
        .collect::<Result<Vec<_>, _>>()
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::TrainJudge { common, epochs, lr } => {
            let mut over = common.overrides();
            over.judge_epochs = epochs;
            over.judge_lr = lr;
            let cfg = config::ExperimentConfig::load(&common.config, &over)?;
            let out = commands::cmd_train_judge(&cfg)?;
            println!(
                "judge trained: test accuracy {:.4}, checkpoint {}",
                out.accuracy,
                out.checkpoint.display()
            );
            Ok(())
        }
        Command::Attack { common } => {
            let cfg = config::ExperimentConfig::load(&common.config, &common.overrides())?;
            let out = commands::cmd_attack(&cfg)?;
            let s = &out.summary;
            println!(
                "{} on {}/{}: {} samples ({} diverged), mean ssim {:.4}, mean l2 {:.4}, asr {:.1}%",
                s.attack, s.model_kind, s.dataset, s.samples, s.diverged, s.mean_ssim, s.mean_l2,
                s.asr
            );
            println!("results: {}", out.results_csv.display());
            Ok(())
        }
        Command::SweepTau { common, taus, strategies } => {
            let strategies = parse_strategies(&strategies)?;
            let cfg = config::ExperimentConfig::load(&common.config, &common.overrides())?;
            let out = commands::cmd_sweep_tau(&cfg, &taus, &strategies)?;
            for c in &out.cells {
                println!(
                    "tau {:.2} {:>4}: asr {:5.1}%  l2 {:.4}  ({} ok, {} diverged)",
                    c.tau, c.strategy, c.asr, c.l2_mean, c.completed, c.diverged
                );
            }
            println!("cells: {}", out.cells_csv.display());
            Ok(())
        }
        Command::RefStats { common } => {
            let cfg = config::ExperimentConfig::load(&common.config, &common.overrides())?;
            let out = commands::cmd_ref_stats(&cfg)?;
            println!("type,mean,std,min,max");
            for (name, line) in [("intra", &out.stats.intra), ("inter", &out.stats.inter)] {
                println!("{},{},{},{},{}", name, line.mean, line.std, line.min, line.max);
            }
            println!("written: {}", out.csv_path.display());
            Ok(())
        }
        Command::Inspect { path } => {
            let text = inspect::inspect_file(&path)?;
            println!("{text}");
            Ok(())
        }
    }
}

/// Entry point shared by main and the integration tests. Returns the process
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; anything else is usage.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
