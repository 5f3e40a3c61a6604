use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rpde_cli::{rerun, run_files, Options};

/// Rough parabolic PDE toolkit: lifts, solves and calculus checks from scenario files.
#[derive(Parser)]
#[command(name = "rpde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Seed for sampled driver paths (overrides driver.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving CSVs, plot scripts and the manifest.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Accept non-geometric (Ito) drivers.
    #[arg(long, global = true)]
    allow_nongeometric: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Driver summary: level norms, Chen defects, bracket.
    Lift { config: PathBuf },
    /// Solve and report energy, remainders and the maximum principle.
    Solve { config: PathBuf },
    /// Chain rule (and product rule when initial.v0 is set).
    Ito { config: PathBuf },
    /// L^p norm evolution.
    Lp { config: PathBuf },
    /// Moser moment sequence and recursive bound.
    Moser { config: PathBuf },
    /// Wong-Zakai refinement sweep over seeds.
    Wz { config: PathBuf },
    /// Driver distance between two scenarios.
    Dist { a: PathBuf, b: PathBuf },
    /// Re-run a manifest and compare output bytes.
    Rerun { manifest: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let opts = Options {
        seed: cli.seed,
        allow_nongeometric: cli.allow_nongeometric,
    };
    let (name, files) = match cli.command {
        Command::Lift { config } => ("lift", vec![config]),
        Command::Solve { config } => ("solve", vec![config]),
        Command::Ito { config } => ("ito", vec![config]),
        Command::Lp { config } => ("lp", vec![config]),
        Command::Moser { config } => ("moser", vec![config]),
        Command::Wz { config } => ("wz", vec![config]),
        Command::Dist { a, b } => ("dist", vec![a, b]),
        Command::Rerun { manifest } => {
            return match rerun(&manifest, &cli.out_dir) {
                Ok(r) if r.mismatches.is_empty() => {
                    println!("identical: {} files", r.compared);
                    ExitCode::SUCCESS
                }
                Ok(r) => {
                    for f in &r.mismatches {
                        println!("differs: {f}");
                    }
                    ExitCode::from(1)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            };
        }
    };
    match run_files(name, &files, &opts, &cli.out_dir) {
        Ok((outcome, out)) => {
            for (check, ok) in &outcome.checks {
                println!("{} {check}", if *ok { "pass" } else { "FAIL" });
            }
            println!("wrote {} files to {}", out.files.len(), out.root.display());
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
