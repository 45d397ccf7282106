//! `dyson-taylor`: symbolic expansion terms, kernel tables, kernel application,
//! convergence studies and a self-test.

mod commands;
mod config;
mod error;
mod output;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;
use crate::output::OutDir;
use crate::selftest::Fault;

#[derive(Parser)]
#[command(name = "dyson-taylor", version, about = "Short-time heat kernel expansions")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,
    /// Seed for randomized checks; overrides the config.
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the operators P_l (and the kernel polynomials at `z`) as JSON.
    Expand(Io),
    /// Tabulate the approximate kernel over (t, x, y) as CSV.
    Kernel(Io),
    /// Apply the approximate kernel to `f` on a grid.
    Apply(Io),
    /// Measure convergence rates against a Crank-Nicolson reference.
    Converge(Io),
    /// Run the built-in invariant checks.
    Selftest {
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, hide = true, value_enum)]
        inject_fault: Option<Fault>,
    },
}

fn load(io: &Io, seed: Option<u64>) -> Result<(config::RunConfig, OutDir), CliError> {
    let mut cfg = config::load(&io.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok((cfg, OutDir::create(&io.out)?))
}

fn show(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Expand(io) => {
            let (cfg, out) = load(&io, cli.seed)?;
            show(&commands::expand(&cfg, &out)?);
        }
        Command::Kernel(io) => {
            let (cfg, out) = load(&io, cli.seed)?;
            show(&[commands::kernel(&cfg, &out)?]);
        }
        Command::Apply(io) => {
            let (cfg, out) = load(&io, cli.seed)?;
            let (path, warnings) = commands::apply(&cfg, &out)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            show(&[path]);
        }
        Command::Converge(io) => {
            let (cfg, out) = load(&io, cli.seed)?;
            let summary = commands::converge(&cfg, &out)?;
            for r in &summary.runs {
                for w in &r.warnings {
                    eprintln!("warning: mu={} center={}: {w}", r.mu, r.center);
                }
                let slope = r.slope.map_or("n/a".to_string(), |s| format!("{s:.3}"));
                println!(
                    "{} mu={} center={} slope={slope} target={}{}",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.mu,
                    r.center,
                    r.target,
                    if r.degenerate { " (at noise floor)" } else { "" }
                );
            }
            println!("wrote {}", io.out.join("summary.json").display());
            if !summary.pass {
                return Err(CliError::Acceptance(
                    "convergence slopes missed their targets; see summary.json".into(),
                ));
            }
        }
        Command::Selftest { out, inject_fault } => {
            let checks = selftest::run(cli.seed.unwrap_or(0), inject_fault);
            let text = selftest::report(&checks);
            print!("{text}");
            if let Some(dir) = out {
                show(&[OutDir::create(&dir)?.write("selftest.txt", text.as_bytes())?]);
            }
            let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
            if !failed.is_empty() {
                return Err(CliError::SelfTest(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

