//! `eft-spectra`: config-driven experiment runner for the eigenenergy
//! emulation toolkit. See README for the config schema and output formats.

mod config;
mod modes;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::Value;

use config::{ExperimentConfig, Mode, MODE_NAMES};
use eft_spectra_core::Error;
use report::ReportBuilder;

#[derive(Parser)]
#[command(name = "eft-spectra", version, about = "Eigenenergy resource-estimation experiments")]
struct Cli {
    /// Experiment mode (must match the config), or "validate".
    mode: String,
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides output_dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override for stochastic modes.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker-thread count for trial parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Validation(_) | Error::Parse { .. } | Error::Contract(_) => EXIT_CONFIG,
        Error::Domain(_) | Error::Numerical(_) | Error::BoundedSearch(_) => EXIT_NUMERIC,
        Error::Io(_) => EXIT_IO,
    }
}

fn parse_mode(name: &str) -> Option<Mode> {
    serde_json::from_value(Value::String(name.to_string())).ok()
}

fn dispatch(
    mode: Mode,
    cfg: &ExperimentConfig,
    out_dir: &std::path::Path,
    rb: &mut ReportBuilder,
) -> eft_spectra_core::Result<()> {
    match mode {
        Mode::QksdSweep => modes::qksd_sweep(cfg, &cfg.spectrum()?, out_dir, rb),
        Mode::QksdBudget => modes::qksd_budget(cfg, &cfg.spectrum()?, out_dir, rb),
        Mode::SpeRun => modes::spe_run(cfg, &cfg.spectrum()?, out_dir, rb),
        Mode::SpeBoundCurve => modes::spe_bound_curve(cfg, out_dir, rb),
        Mode::OverlapAnalysis => modes::overlap_mode(cfg, &cfg.spectrum()?, out_dir, rb),
        Mode::Norms => modes::norms(cfg, out_dir, rb),
        Mode::Compare => modes::compare(cfg, &cfg.spectrum()?, out_dir, rb),
        Mode::AcdfCurve => modes::acdf_curve(cfg, &cfg.spectrum()?, out_dir, rb),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", cli.config.display());
            return ExitCode::from(EXIT_IO);
        }
    };
    let mut cfg = match ExperimentConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }

    if cli.mode == "validate" {
        let violations = cfg.violations();
        if violations.is_empty() {
            println!("config ok");
            return ExitCode::SUCCESS;
        }
        for v in &violations {
            println!("violation: {v}");
        }
        return ExitCode::from(EXIT_CONFIG);
    }

    let Some(mode) = parse_mode(&cli.mode) else {
        eprintln!("error: unknown mode {:?}; expected one of: {MODE_NAMES}, validate", cli.mode);
        return ExitCode::from(EXIT_CONFIG);
    };
    if mode != cfg.mode {
        eprintln!(
            "error: command-line mode {:?} does not match config mode {:?}",
            cli.mode,
            serde_json::to_string(&cfg.mode).unwrap().trim_matches('"')
        );
        return ExitCode::from(EXIT_CONFIG);
    }
    let violations = cfg.violations();
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("config violation: {v}");
        }
        return ExitCode::from(EXIT_CONFIG);
    }

    if let Some(jobs) = cli.jobs {
        // best effort; a pre-existing global pool only affects throughput,
        // never results
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }

    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create output dir {}: {e}", out_dir.display());
        return ExitCode::from(EXIT_IO);
    }

    let echo: Value = serde_json::to_value(&cfg).unwrap();
    let mut rb = ReportBuilder::new(echo);

    let result = dispatch(mode, &cfg, &out_dir, &mut rb);
    if let Err(e) = result {
        eprintln!("error in mode {}: {e}", cli.mode);
        return ExitCode::from(exit_for(&e));
    }

    match rb.finish(&out_dir) {
        Ok(path) => {
            println!("report: {}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: cannot write report: {e}");
            ExitCode::from(EXIT_IO)
        }
    }
}
