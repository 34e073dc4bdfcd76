//! The `taxoseg` command line.
//!
//! Exit status is 0 on success, 1 when the configuration cannot be used
//! (nothing is written) and 2 when some inputs failed; the rest are still
//! processed and the failures are listed in `<out>/errors.log`.

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::balance::Normalization;
use crate::metrics::Objective;

pub use config::{RunConfig, Resolved};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "taxoseg", version, about = "Taxonomy-aware segmentation inference and evaluation")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resolve probability maps into hierarchical predictions.
    Infer,
    /// Score predictions against annotation masks.
    Evaluate,
    /// Fit per-leaf confidence thresholds on a validation set.
    Calibrate {
        #[arg(long, value_enum, default_value = "f1")]
        objective: ObjectiveArg,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
    /// Effective-number class weights from annotation masks.
    Weights {
        #[arg(long, default_value_t = 0.99)]
        beta: f64,
        #[arg(long, value_enum, default_value = "mean-one")]
        normalization: NormalizationArg,
    },
    /// Generate a synthetic field from a spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ObjectiveArg {
    F1,
    Dice,
}

impl From<ObjectiveArg> for Objective {
    fn from(v: ObjectiveArg) -> Self {
        match v {
            ObjectiveArg::F1 => Objective::F1,
            ObjectiveArg::Dice => Objective::Dice,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum NormalizationArg {
    None,
    MeanOne,
}

impl From<NormalizationArg> for Normalization {
    fn from(v: NormalizationArg) -> Self {
        match v {
            NormalizationArg::None => Normalization::None,
            NormalizationArg::MeanOne => Normalization::MeanOne,
        }
    }
}

/// Per-input failures of a command that otherwise completed.
pub(crate) type Failures = Vec<(String, anyhow::Error)>;

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    pool.install(|| match dispatch(&cli) {
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_CONFIG
        }
        Ok(failures) if failures.is_empty() => EXIT_OK,
        Ok(failures) => {
            for (input, e) in &failures {
                eprintln!("failed: {input}: {e:#}");
            }
            EXIT_PARTIAL
        }
    })
}

fn dispatch(cli: &Cli) -> Result<Failures> {
    if let Command::Synth { spec } = &cli.command {
        return commands::synth(spec, cli.out.as_deref().unwrap_or(Path::new(".")));
    }
    let path = cli
        .config
        .as_deref()
        .context("--config is required for this command")?;
    let rc = Resolved::load(path, cli.out.as_deref())?;
    let failures = match &cli.command {
        Command::Infer => commands::infer(&rc)?,
        Command::Evaluate => commands::evaluate(&rc)?,
        Command::Calibrate { objective, step } => commands::calibrate(&rc, (*objective).into(), *step)?,
        Command::Weights { beta, normalization } => commands::weights(&rc, *beta, (*normalization).into())?,
        Command::Synth { .. } => unreachable!(),
    };
    write_error_log(&rc.out, &failures)?;
    Ok(failures)
}

fn write_error_log(out: &Path, failures: &Failures) -> Result<()> {
    let path = out.join("errors.log");
    if failures.is_empty() {
        if path.exists() {
            std::fs::remove_file(&path)?;
        }
        return Ok(());
    }
    let text: String = failures
        .iter()
        .map(|(input, e)| format!("{input}: {e:#}\n"))
        .collect();
    write_atomic(&path, text.as_bytes())
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    // Temporary files are created private; artifacts get ordinary permissions.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
