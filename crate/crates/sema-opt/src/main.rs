//! Command-line entry point: run specs, verification suites, problem
//! listing, and fixture dumps.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sema_opt::harness::{
    dump_fixture, list_problems, run, seed_base_from_env, RunOptions, RunSpec,
};

#[derive(Parser)]
#[command(
    name = "sema-opt",
    about = "Moving-average stochastic optimization experiment harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a JSON run spec: one trajectory CSV per seed plus summary
    /// CSV/JSON in the output directory.
    Run {
        /// Path to the JSON spec file.
        spec: PathBuf,
        /// Override the spec's seed list (comma-separated).
        #[arg(long)]
        seeds: Option<String>,
        /// Output directory (overrides the spec's `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of parallel seed workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Assert the strict floating-point contract (IEEE-754 doubles, no
        /// FMA reassociation); informational, the core loops always comply.
        #[arg(long)]
        strict_fp: bool,
    },
    /// Run a named verification suite and print per-check margins.
    Verify {
        /// Suite name (see `verify --help` listing below).
        suite: String,
    },
    /// Problem catalog operations.
    Problems {
        #[command(subcommand)]
        action: ProblemsAction,
    },
    /// Fixture operations.
    Fixture {
        #[command(subcommand)]
        action: FixtureAction,
    },
}

#[derive(Subcommand)]
enum ProblemsAction {
    /// List the known problem identifiers.
    List,
}

#[derive(Subcommand)]
enum FixtureAction {
    /// Print the self-describing fixture for a problem's default instance.
    Dump { problem: String },
}

fn parse_seed_list(text: &str) -> Result<Vec<u64>, sema_opt::Error> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| sema_opt::Error::config(format!("bad seed \"{s}\"")))
        })
        .collect()
}

fn execute(cli: Cli) -> Result<(), sema_opt::Error> {
    match cli.command {
        Command::Run { spec, seeds, out, jobs, strict_fp } => {
            let text = std::fs::read_to_string(&spec)?;
            let mut spec = RunSpec::from_json(&text)?;
            if let Some(list) = seeds {
                spec.seeds = parse_seed_list(&list)?;
                if spec.seeds.is_empty() {
                    return Err(sema_opt::Error::config("--seeds produced an empty list"));
                }
            }
            if let Some(dir) = out {
                spec.out = Some(dir.to_string_lossy().into_owned());
            }
            let opts = RunOptions {
                out_dir: PathBuf::from(spec.out.as_deref().unwrap_or("runs")),
                jobs,
                seed_base: seed_base_from_env(),
            };
            if strict_fp {
                eprintln!("strict-fp: IEEE-754 double contract asserted");
            }
            let record = run(&spec, &opts)?;
            println!(
                "{} seeds: mean avg ||grad||^2 {:.6e}, mean avg delta {:.6e}, mean final ||grad||^2 {:.6e}",
                record.seeds.len(),
                record.mean_avg_grad_norm_sq,
                record.mean_avg_delta,
                record.mean_final_grad_norm_sq
            );
            Ok(())
        }
        Command::Verify { suite } => {
            let report = sema_opt::harness::verify(&suite)?;
            print!("{}", report.render());
            if report.passed() {
                Ok(())
            } else {
                Err(sema_opt::Error::Verification(format!("suite {suite} failed")))
            }
        }
        Command::Problems { action: ProblemsAction::List } => {
            print!("{}", list_problems());
            Ok(())
        }
        Command::Fixture { action: FixtureAction::Dump { problem } } => {
            print!("{}", dump_fixture(&problem)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
