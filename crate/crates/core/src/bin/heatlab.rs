use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use heatlab::runner::{self, RunConfig, SpaceSpec};
use heatlab::Error;

#[derive(Parser)]
#[command(name = "heatlab", version, about = "Heat-kernel inequality checks on model and sampled spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run suites and write report.json plus one CSV per sweep.
    Run {
        /// Space, e.g. `euclidean:N=2`, `circle:L=6.283185307179586,n=256`,
        /// `hyperbolic3`, `sampled:path=dir`. Repeatable.
        #[arg(long = "space")]
        spaces: Vec<String>,
        /// Suite name or `all`. Repeatable; commas also separate names.
        #[arg(long = "suite", value_delimiter = ',')]
        suites: Vec<String>,
        /// TOML run configuration; command-line flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: logical cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Relative tolerance for every check.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Print the registered suites.
    ListSuites,
    /// Sample a model space and save it as a directory.
    SampleSpace {
        /// Model space with a sample size, e.g. `euclidean:N=2,R=8,n=900`.
        #[arg(long)]
        space: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tabulate (t, d, p, |grad p|, d/dt p) for a model kernel as CSV.
    DumpKernel {
        #[arg(long)]
        space: String,
        /// Times, comma separated.
        #[arg(long = "t", value_delimiter = ',', required = true)]
        t: Vec<f64>,
        /// Distances, comma separated.
        #[arg(long = "d", value_delimiter = ',', required = true)]
        d: Vec<f64>,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn usage(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_) | Error::UnknownSuite(_) | Error::UnknownKind(_) | Error::InvalidDescriptor(_)
    )
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if usage(&e) { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            spaces,
            suites,
            config,
            out,
            seed,
            jobs,
            tolerance,
        } => {
            let mut cfg = match config {
                Some(path) => match RunConfig::load(&path) {
                    Ok(c) => c,
                    Err(Error::Io(e)) => return fail(Error::Config(format!("{}: {e}", path.display()))),
                    Err(e) => return fail(e),
                },
                None => RunConfig::default(),
            };
            if !spaces.is_empty() {
                cfg.spaces = spaces;
            }
            if !suites.is_empty() {
                cfg.suites = suites;
            }
            if let Some(out) = out {
                cfg.out = out;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if tolerance.is_some() {
                cfg.tolerance = tolerance;
            }
            if jobs == Some(0) {
                return fail(Error::Config("--jobs must be at least 1".into()));
            }
            if let Err(e) = cfg.validate() {
                return fail(e);
            }
            let report = match runner::run(&cfg, jobs) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            for entry in &report.results {
                let r = &entry.result;
                let margin = r
                    .constants
                    .get("worst_relative_margin")
                    .map_or(String::from("-"), |m| format!("{m:.3e}"));
                println!("{:<20} {:<24} {:<40} {}", r.status, r.name, r.space, margin);
            }
            println!("report: {}", cfg.out.join("report.json").display());
            ExitCode::from(report.exit_code() as u8)
        }
        Command::ListSuites => {
            for (name, summary) in runner::suites() {
                println!("{name:<24} {summary}");
            }
            ExitCode::SUCCESS
        }
        Command::SampleSpace { space, out, seed } => {
            let spec: SpaceSpec = match space.parse() {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            match runner::sample_space(&spec, seed, &out) {
                Ok(s) => {
                    println!("wrote {} points to {}", s.len(), out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::DumpKernel { space, t, d, out } => {
            let spec: SpaceSpec = match space.parse() {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            if spec.is_discrete() {
                return fail(Error::Config("dump-kernel needs a model space without n= or path=".into()));
            }
            let csv = match runner::dump_kernel(&spec.descriptor, &t, &d) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            match out {
                Some(path) => match std::fs::write(&path, csv) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => fail(e.into()),
                },
                None => {
                    print!("{csv}");
                    ExitCode::SUCCESS
                }
            }
        }
    }
}
