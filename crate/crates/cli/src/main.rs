use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lowrank_cli::runner::{diagnose, fit_directory, run_experiment, CliError};
use lowrank_cli::ExperimentConfig;

/// Low-rank factored gradient descent experiments.
#[derive(Parser)]
#[command(name = "lowrank", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment across its seeds, writing one
    /// trajectory CSV per seed plus a summary CSV.
    Run {
        /// Path to the flat key = value config file.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed list, e.g. `0..10` or `3,5,8`.
        #[arg(long)]
        seeds: Option<String>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the curvature / noise / Hessian diagnostics report for the
    /// first seed of a config.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-fit contraction rates from existing trajectory CSVs.
    Fit {
        /// Directory containing traj_*.csv files.
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, seeds, out } => {
            let mut cfg = ExperimentConfig::parse_file(&config)?;
            if let Some(spec) = seeds {
                let tmp = ExperimentConfig::parse_str(&format!(
                    "model = sym-quadratic\nn = 2\nr = 1\nsigma_min = 1\nkappa = 1\nnoise = 0\n\
                     init = oracle\nphi = 0\nmax_iter = 1\nseeds = {spec}\nout = ."
                ))?;
                cfg.seeds = tmp.seeds;
            }
            if let Some(dir) = out {
                cfg.out = dir;
            }
            let rows = run_experiment(&cfg)?;
            println!(
                "wrote {} trajectories and summary.csv under {}",
                rows.len(),
                cfg.out.display()
            );
            Ok(())
        }
        Command::Diagnose { config } => {
            let cfg = ExperimentConfig::parse_file(&config)?;
            print!("{}", diagnose(&cfg)?);
            Ok(())
        }
        Command::Fit { input } => {
            let fits = fit_directory(&input)?;
            println!("file,rho_hat,floor,r_squared,window_start,window_end");
            for (path, fit) in fits {
                match fit {
                    Ok(f) => println!(
                        "{},{:.6},{:.6e},{:.4},{},{}",
                        path.display(),
                        f.rho_hat,
                        f.floor,
                        f.r_squared,
                        f.fit_window.0,
                        f.fit_window.1
                    ),
                    Err(e) => println!("{},,,,,{e}", path.display()),
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
