use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use genogram_clt_cli::{run, ExperimentConfig, RunOptions, Subcommand};

/// Exact genogram identity checks and Monte Carlo rate experiments.
#[derive(Debug, Parser)]
#[command(name = "genogram-clt", version)]
struct Cli {
    #[arg(value_enum)]
    command: Subcommand,
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config `out_dir`, then `out/<subcommand>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "GENOGRAM_CLT_JOBS")]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = ExperimentConfig::load(&cli.config)
        .and_then(|cfg| run(cli.command, &cfg, &RunOptions { seed: cli.seed, out: cli.out.clone() }));
    match result {
        Ok(summary) => {
            for c in &summary.checks {
                println!("{:<36} {:<6} value={} threshold={}", c.name, if c.pass { "ok" } else { "FAIL" }, c.value, c.threshold);
            }
            if summary.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
