use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lclt::{load_config, run_to_dir, CliError, DEFAULT_OUTPUT_DIR};
use lclt_core::wasserstein::noise_floor;

#[derive(Parser)]
#[command(name = "lclt", version, about = "Normal-approximation experiments for Langevin Monte Carlo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config (or a previous manifest.json).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Also write log-log SVG charts of the fitted metrics.
        #[arg(long)]
        svg: bool,
    },
    /// Check a config and print its expanded grid.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the empirical W1 noise floor between two standard Gaussian clouds.
    Calibrate {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        p: u32,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed, threads, svg } => {
            if let Some(k) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global()
                    .map_err(|e| CliError::Config(format!("cannot start {k} threads: {e}")))?;
            }
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
            let (result, artifacts) = run_to_dir(&cfg, &dir, svg)?;
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            println!("{} rows -> {}", result.rows.len(), artifacts.results.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            let points = cfg.validate()?;
            println!("{}: {} grid points", cfg.scenario.name(), points.len());
            for p in points {
                println!("d={} n={} eta={}", p.d, p.n, p.eta);
            }
            Ok(())
        }
        Command::Calibrate { d, m, seeds, seed, p } => {
            if !(p == 1 || p == 2) {
                return Err(CliError::Config(format!("p must be 1 or 2, got {p}")));
            }
            let floor = noise_floor(m, d, p, seeds, seed)?;
            println!("d,m,p,seeds,floor,stderr");
            println!("{d},{m},{p},{seeds},{},{}", floor.mean, floor.stderr);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
