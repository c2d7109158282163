use std::path::PathBuf;
use std::process::exit;

use clap::{Parser, Subcommand};
use otflow::scenario::{cmd_report, cmd_run, cmd_verify};

#[derive(Parser)]
#[command(name = "otflow", version, about = "Parabolic optimal transport flow with a second boundary condition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the structural audits for a scenario.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Where to write audit.csv (defaults to the config's `out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit, run the flow and write all artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute verdicts from a run directory and emit plot slices.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    // OTFLOW_THREADS caps the worker pool; results do not depend on it.
    if let Some(n) = std::env::var("OTFLOW_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let mut log = std::io::stderr();
    let code = match cli.command {
        Command::Verify { config, out } => cmd_verify(&config, out.as_deref(), &mut log),
        Command::Run { config, out } => cmd_run(&config, &out, &mut log),
        Command::Report { dir } => cmd_report(&dir, &mut log),
    };
    exit(code.code());
}
