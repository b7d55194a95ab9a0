//! Command-line front end.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{data_root_from_env, ExperimentConfig, Preset};
use crate::detection::format_table;
use crate::error::{Error, Result};
use crate::pipeline::{self, Layout, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "encdec-ad", version, about = "LSTM encoder-decoder anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML, or JSON by extension).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Bundled experiment preset.
    #[arg(long, value_parser = ["power", "space_shuttle", "ecg", "synthetic"])]
    pub preset: Option<String>,
    /// Override the experiment seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the hidden sizes to sweep, e.g. `--hidden-sizes 20,40`.
    #[arg(long, value_delimiter = ',')]
    pub hidden_sizes: Option<Vec<usize>>,
    /// Output directory.
    #[arg(long, default_value = "encdec-ad-out")]
    pub out: PathBuf,
    /// Dataset root for relative series paths (default: $ENCDEC_AD_DATA_DIR).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, window, split and normalize a dataset.
    Prepare(Common),
    /// Train one model per hidden size.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Pause after this many epochs; continue later with `--resume`.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Fit the reconstruction-error Gaussian on v_N1.
    FitErrorModel(Common),
    /// Select the threshold and hidden size on validation data.
    Threshold(Common),
    /// Score the test windows with the selected model.
    Score(Common),
    /// Compute precision, recall, F_beta and TPR/FPR on the test scores.
    Evaluate(Common),
    /// Run every stage and write plots.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Skip the per-window SVG plots.
        #[arg(long)]
        no_plots: bool,
    },
}

impl Common {
    /// Config from `--config`/`--preset`, else the snapshot in `--out`.
    fn resolve(&self) -> Result<(ExperimentConfig, Layout)> {
        let layout = Layout::new(&self.out);
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => Preset::parse(name)?.config(),
            (None, None) => pipeline::read_config(&layout).map_err(|e| match e {
                Error::Io { .. } => Error::InvalidConfig(format!(
                    "no --config or --preset given and no config.json in {}",
                    self.out.display()
                )),
                other => other,
            })?,
        };
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(cs) = &self.hidden_sizes {
            cfg.model.hidden_sizes = cs.clone();
        }
        cfg.validate()?;
        Ok((cfg, layout))
    }

    fn data_root(&self) -> Option<PathBuf> {
        self.data_dir.clone().or_else(data_root_from_env)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(common) => {
            let (cfg, layout) = common.resolve()?;
            let prepared = pipeline::stage_prepare(&cfg, common.data_root().as_deref(), &layout)?;
            print_json(&prepared.manifest.dataset)?;
            for (name, set) in prepared.split.subsets() {
                println!("{name:>5}: {} windows", set.len());
            }
        }
        Command::Train {
            common,
            resume,
            stop_after,
        } => {
            let (cfg, layout) = common.resolve()?;
            for (model, report) in pipeline::stage_train(&cfg, &layout, resume.as_deref(), stop_after)? {
                println!(
                    "c={}: epochs {}, best epoch {}, stop {}",
                    model.c,
                    report.epochs_run,
                    report.best_epoch,
                    report.stop_reason.map_or("paused", |r| r.as_str())
                );
            }
        }
        Command::FitErrorModel(common) => {
            let (cfg, layout) = common.resolve()?;
            for (c, gm) in cfg.model.hidden_sizes.iter().zip(pipeline::stage_fit_error_models(&cfg, &layout)?) {
                println!(
                    "c={c}: {} error vectors, regularization {:e}",
                    gm.sample_count(),
                    gm.factorization().regularization()
                );
            }
        }
        Command::Threshold(common) => {
            let (cfg, layout) = common.resolve()?;
            print_json(&pipeline::stage_threshold(&cfg, &layout)?)?;
        }
        Command::Score(common) => {
            let (cfg, layout) = common.resolve()?;
            let scores = pipeline::stage_score(&cfg, &layout)?;
            println!("{} points scored -> {}", scores.len(), layout.scores().display());
        }
        Command::Evaluate(common) => {
            let (cfg, layout) = common.resolve()?;
            let report = pipeline::stage_evaluate(&cfg, &layout)?;
            print!("{}", format_table(std::slice::from_ref(&report.row)));
        }
        Command::Run {
            common,
            resume,
            no_plots,
        } => {
            let (cfg, layout) = common.resolve()?;
            let opts = RunOptions { plots: !no_plots };
            let outcome =
                pipeline::run_experiment(&cfg, common.data_root().as_deref(), &layout, resume.as_deref(), opts)?;
            print!("{}", format_table(std::slice::from_ref(&outcome.report.row)));
            if let Some(auc) = outcome.report.window_auc {
                println!("window AUC {auc:.4}");
            }
        }
    }
    Ok(())
}

/// Process exit code for an error category.
pub fn exit_code(err: &Error) -> i32 {
    match err.category() {
        "config" => 2,
        "parse" => 3,
        "io" => 4,
        "data" => 5,
        "dimension" => 6,
        "numerical" => 7,
        "artifact" => 8,
        _ => 1,
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            exit_code(&e)
        }
    }
}
