use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tbi_cli::{load_config_with_overrides, run_fit, run_score, run_synth, CliError};

/// Bayesian single-index modeling of heterogeneous treatment effects:
/// fits the model by Metropolis-within-Gibbs sampling and produces
/// treatment-benefit-index scores and individualized treatment decisions.
#[derive(Parser)]
#[command(name = "tbi", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and write the artifact set (draws archive, coefficient
    /// table, subject scores, figure data, run metadata).
    Fit {
        /// Run configuration file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `out` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score new data against a stored draws archive.
    Score {
        /// Path to a draws.bin produced by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// CSV of new covariate rows (same column names as training).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for scores.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic randomized trial CSV.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::try_parse().map_err(|e| {
        // let clap print its rich message, then map to the usage exit code
        let _ = e.print();
        CliError::Usage(String::new())
    })?;
    match cli.command {
        Command::Fit { config, seed, out } => {
            let (cfg, out_dir) = load_config_with_overrides(&config, seed, out.as_deref())?;
            let artifacts = run_fit(&cfg, &out_dir)?;
            println!(
                "fit complete: {} draws, acceptance rate {:.3}, artifacts in {}",
                artifacts.model.draws.n_draws(),
                artifacts.model.draws.acceptance_rate,
                artifacts.out_dir.display()
            );
            Ok(())
        }
        Command::Score { model, data, out } => {
            let path = run_score(&model, &data, &out)?;
            println!("scores written to {}", path.display());
            Ok(())
        }
        Command::Synth { config, seed, out } => {
            let (cfg, out_dir) = load_config_with_overrides(&config, seed, out.as_deref())?;
            let path = run_synth(&cfg, &out_dir)?;
            println!("synthetic dataset written to {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.message().is_empty() {
                eprintln!("error: {}", e.message());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
