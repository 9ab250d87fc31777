use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use minimax_mfg::io::fmt_f64;
use minimax_mfg_cli::{cmd_check, cmd_nash_gap, cmd_solve, cmd_w1, load_config, result_dir, Setup, Status};

/// Equilibria of first-order mean field games and their N-player Nash gaps.
///
/// Config keys can be overridden with `MFG_<SECTION>__<KEY>` variables,
/// e.g. `MFG_SOLVER__TOL_W=1e-4`.
#[derive(Parser)]
#[command(name = "mfg", version)]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for an equilibrium and write the result directory.
    Solve {
        config: PathBuf,
        /// Result directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a result directory; writes check.json into it.
    Check {
        config: PathBuf,
        /// Result directory; defaults to `output.dir`.
        results: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure N-player Nash gaps; writes nash_gap.csv and nash_gap.json.
    NashGap {
        config: PathBuf,
        /// Result directory; defaults to `output.dir`.
        results: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a single seed instead of `nplayer.seeds`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// W1 distance between two measure CSV files.
    W1 { a: PathBuf, b: PathBuf },
}

fn run(cli: Cli) -> Result<Status> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    match cli.command {
        Command::Solve { config, out } => {
            let setup = Setup::new(load_config(&config, out.as_deref(), None)?)?;
            for w in &setup.warnings {
                eprintln!("warning: {w}");
            }
            let (status, d) = cmd_solve(&setup)?;
            println!(
                "{}: residual {} after {} iterations ({}), written to {}",
                d.model,
                fmt_f64(d.residual),
                d.iterations,
                if d.converged { "converged" } else { "NOT converged" },
                setup.cfg.output.dir.display()
            );
            Ok(status)
        }
        Command::Check { config, results, out } => {
            let setup = Setup::new(load_config(&config, out.as_deref(), None)?)?;
            let dir = result_dir(&setup.cfg, results);
            let (status, r) = cmd_check(&setup, &dir)?;
            for (name, s) in [
                ("terminal", &r.terminal),
                ("viability", &r.viability),
                ("upper-hadamard", &r.upper_hadamard),
                ("lower-hadamard", &r.lower_hadamard),
                ("bellman", &r.bellman),
                ("equilibrium", &r.equilibrium),
            ] {
                println!(
                    "{} {name}: defect {} tol {}",
                    if s.pass { "PASS" } else { "FAIL" },
                    fmt_f64(s.defect),
                    fmt_f64(s.tol)
                );
            }
            Ok(status)
        }
        Command::NashGap {
            config,
            results,
            out,
            seed,
        } => {
            let setup = Setup::new(load_config(&config, out.as_deref(), seed)?)?;
            let dir = result_dir(&setup.cfg, results);
            let (status, m) = cmd_nash_gap(&setup, &dir)?;
            print!("{}", minimax_mfg_cli::nash_csv(&m.rows));
            if !m.all_within_bound {
                eprintln!("a converged row exceeds its bound plus slack {}", fmt_f64(m.slack));
            }
            if m.rows.iter().any(|r| !r.converged) {
                eprintln!("warning: some rows did not converge");
            }
            Ok(status)
        }
        Command::W1 { a, b } => {
            println!("{}", fmt_f64(cmd_w1(&a, &b)?));
            Ok(Status::Ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(s) => ExitCode::from(s.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
