//! Command-line driver: simulate | analyze | verify | all over a versioned
//! JSON config, with deterministic parallelism via --threads.

use clap::{Parser, Subcommand};
use hmflab::config::RunConfig;
use hmflab::pipeline;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hmflab", about = "harmonic map heat flow stratification lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = rayon default). Results are thread-count
    /// independent.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Resolve the trajectory and persist snapshots plus the manifest.
    Simulate,
    /// Energies, scale bits, strata labels, regularity records.
    Analyze,
    /// Coverings, Minkowski fits, pigeonhole assertions, plots.
    Verify,
    /// simulate, analyze and verify in sequence.
    All,
    /// Print the example config to stdout.
    Example,
}

fn run(cli: &Cli) -> hmflab::Result<()> {
    if matches!(cli.cmd, Cmd::Example) {
        println!("{}", serde_json::to_string_pretty(&RunConfig::example())?);
        return Ok(());
    }
    let path = cli.config.as_ref().ok_or_else(|| {
        hmflab::Error::Config("--config is required for this subcommand".into())
    })?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.cmd {
        Cmd::Simulate => {
            pipeline::cmd_simulate(&cfg, &cli.out)?;
        }
        Cmd::Analyze => {
            let traj = pipeline::cmd_simulate(&cfg, &cli.out)?;
            pipeline::cmd_analyze(&cfg, &cli.out, &traj)?;
        }
        Cmd::Verify | Cmd::All => {
            pipeline::run_all(&cfg, &cli.out)?;
        }
        Cmd::Example => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build();
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
