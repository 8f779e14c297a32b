use clap::{Parser, Subcommand};
use spiralflow::cli_io::{error_json, init_threads, run, Command, Overrides};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "spiralflow", version, about = "Self-similar spiral solutions of the 2-D Euler equations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve for the stream profile and write solution.csv and a manifest.
    Solve(Opts),
    /// Rebuild physical fields, spiral curves, and convergence tables from a solution.
    Reconstruct(Opts),
    /// Run the invariant battery.
    Verify(Opts),
    /// Write the closed-form radial vortex in the same formats.
    Radial(Opts),
}

#[derive(clap::Args)]
struct Opts {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long = "n-max")]
    n_max: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated physical times.
    #[arg(long)]
    t: Option<String>,
    /// Cartesian sample grid, <N>x<N>@<extent>.
    #[arg(long)]
    grid: Option<String>,
}

fn main() {
    let cli = Cli::parse();
    let (command, o) = match cli.command {
        Cmd::Solve(o) => (Command::Solve, o),
        Cmd::Reconstruct(o) => (Command::Reconstruct, o),
        Cmd::Verify(o) => (Command::Verify, o),
        Cmd::Radial(o) => (Command::Radial, o),
    };
    let ov = Overrides { mu: o.mu, n_max: o.n_max, out: o.out, t: o.t, grid: o.grid };
    let result = init_threads().and_then(|_| run(command, o.config.as_deref(), &ov));
    match result {
        Ok(man) => {
            if command == Command::Verify {
                for it in &man.verify {
                    println!("PASS {} measured={:e} tolerance={:e}", it.name, it.measured, it.tolerance);
                }
            } else {
                println!("{} ok: {} artifacts in {}", command.name(), man.artifacts.len(), man.config.output_dir.display());
            }
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            std::process::exit(e.exit_code());
        }
    }
}
