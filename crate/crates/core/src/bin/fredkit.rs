use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fredkit_core::cli::{self, RunOptions, EXIT_INPUT};
use fredkit_core::problem_file::Overrides;
use fredkit_core::Method;

#[derive(Debug, Parser)]
#[command(name = "fredkit", version, about = "Solve and diagnose perturbed integral equations f(u) = v")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Report file
    #[arg(long, global = true, default_value = "report.json")]
    output: PathBuf,

    /// Solver tolerance (overrides the problem file)
    #[arg(long, global = true)]
    tol: Option<f64>,

    /// Quadrature nodes per dimension (overrides the problem file)
    #[arg(long, global = true)]
    nodes: Option<usize>,

    /// Seed for randomized checks and multistart
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Solver method (overrides the problem file)
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,

    /// Suppress standard output
    #[arg(long, global = true)]
    quiet: bool,

    /// Record phase timings in the report (breaks byte-identical reports)
    #[arg(long, global = true)]
    timings: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Picard,
    Newton,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve f(u) = v for a problem file
    Solve { file: PathBuf },
    /// Run the hypothesis checks for a problem file
    Check { file: PathBuf },
    /// Run a built-in example end to end (example1 | example2)
    Reproduce { example: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();

    let args = match Cli::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let opts = RunOptions {
        output: args.output,
        overrides: Overrides {
            tol: args.tol,
            nodes: args.nodes,
            seed: args.seed,
            method: args.method.map(|m| match m {
                MethodArg::Picard => Method::Picard,
                MethodArg::Newton => Method::Newton,
            }),
        },
        quiet: args.quiet,
        timings: args.timings,
    };
    let code = match &args.command {
        Command::Solve { file } => cli::run_solve(file, &opts),
        Command::Check { file } => cli::run_check(file, &opts),
        Command::Reproduce { example } => cli::run_reproduce(example, &opts),
    };
    ExitCode::from(code as u8)
}
