use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use whittle_experiments::oracle_export::export_oracle;
use whittle_experiments::report::write_report;
use whittle_experiments::spectrum::export_spectrum;
use whittle_experiments::{run, ExperimentConfig, Mode, Result};

#[derive(Parser)]
#[command(name = "whittle", version, about = "Whittle index learning experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run the configured algorithm and log checkpoint metrics.
    Run(Common),
    /// Export exact indices and, when feasible, the optimal joint values.
    Oracle(Common),
    /// Aggregate the metric logs in a run directory.
    Report(Common),
    /// Train a QWINN network and export its stability spectrum.
    Spectrum(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Run replications one after another.
    #[arg(long)]
    serial: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    fn mode(&self) -> Mode {
        if self.serial {
            Mode::Serial
        } else {
            Mode::Parallel
        }
    }
}

fn execute(verb: Verb) -> Result<()> {
    match verb {
        Verb::Run(args) => {
            let config = args.load()?;
            let out = run(&config, args.mode())?;
            for note in &out.notes {
                eprintln!("{note}");
            }
            println!("{} rows -> {}", out.rows.len(), out.metrics_path.display());
        }
        Verb::Oracle(args) => {
            let config = args.load()?;
            let (export, written) = export_oracle(&config)?;
            for note in &export.notes {
                eprintln!("{note}");
            }
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Verb::Report(args) => {
            let config = args.load()?;
            let report = write_report(&config.output_dir)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{} aggregate rows in {}", report.rows.len(), config.output_dir.display());
        }
        Verb::Spectrum(args) => {
            let config = args.load()?;
            let out = export_spectrum(&config)?;
            let r = &out.report;
            println!(
                "{} params, positive definite: {}, max modulus: {}",
                r.param_count,
                r.positive_definite,
                r.max_modulus.map_or("n/a".to_string(), |m| format!("{m:.6}")),
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
