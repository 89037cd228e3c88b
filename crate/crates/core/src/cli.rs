//! Orchestration behind the `fredkit` binary: `solve`, `check` and `reproduce`.
//!
//! Exit codes: 0 success, 1 input error (unreadable file, schema or expression
//! error, unknown example), 2 solver failure. A report is written whenever the
//! input was valid, including on solver failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::diagnostics::{self, DEFAULT_T_VALUES};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::operators::Problem;
use crate::problem_file::{LoadedProblem, Overrides, ProblemFile, SolveMethod};
use crate::report;
use crate::solvers::{self, ContinuationReport, Method, SolveReport, SolverOptions, UniquenessReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Starts used by the uniqueness probe in `reproduce`.
pub const REPRODUCE_STARTS: usize = 16;
const COERCIVITY_DIRECTIONS: usize = 4;
const COERCIVITY_SCALES: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];
const LAX_MILGRAM_TRIALS: usize = 256;
/// Above this many nodes the SVD-based index check is skipped.
const MAX_INDEX_CHECK_NODES: usize = 600;

pub const EXAMPLE1: &str = r#"{
  "domain": { "intervals": [[0, 1]] },
  "quadrature": { "rule": "trapezoid", "nodes_per_dim": 201 },
  "linear_kernels": ["0.4*cos(x*y)", "0.2*x*y"],
  "rhs": "1 + x",
  "solver": { "method": "picard", "tol": 1e-10, "max_iter": 500, "seed": 0 }
}"#;

pub const EXAMPLE2: &str = r#"{
  "domain": { "intervals": [[0, 1]] },
  "quadrature": { "rule": "trapezoid", "nodes_per_dim": 201 },
  "hammerstein_kernel": "0.25*sin(u)",
  "rhs": "1",
  "solver": { "method": "newton", "tol": 1e-10, "max_iter": 500, "seed": 0 }
}"#;

pub fn example_source(id: &str) -> Result<&'static str> {
    match id {
        "example1" => Ok(EXAMPLE1),
        "example2" => Ok(EXAMPLE2),
        other => Err(Error::UnknownExample(other.to_string())),
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub output: PathBuf,
    pub overrides: Overrides,
    pub quiet: bool,
    /// Record wall-clock phase timings in `timings_ms` (makes reports non-reproducible).
    pub timings: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            output: PathBuf::from("report.json"),
            overrides: Overrides::default(),
            quiet: false,
            timings: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Sampled evidence only.
    Estimate,
    Skipped,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub status: CheckStatus,
    pub message: Option<String>,
    pub detail: Value,
}

impl CheckEntry {
    fn from_result<T: Serialize>(name: &str, result: Result<T>, status: impl FnOnce(&T) -> CheckStatus) -> Self {
        match result {
            Ok(r) => CheckEntry {
                name: name.into(),
                status: status(&r),
                message: None,
                detail: serde_json::to_value(&r).unwrap_or(Value::Null),
            },
            Err(e) => CheckEntry {
                name: name.into(),
                status: CheckStatus::Error,
                message: Some(e.to_string()),
                detail: Value::Null,
            },
        }
    }

    fn skipped(name: &str, why: &str) -> Self {
        CheckEntry {
            name: name.into(),
            status: CheckStatus::Skipped,
            message: Some(why.into()),
            detail: Value::Null,
        }
    }
}

fn pass_fail(ok: bool) -> CheckStatus {
    if ok {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    }
}

/// Runs every hypothesis check on a loaded problem, in a fixed order.
pub fn run_check_suite(problem: &Problem, v: &GridFunction, seed: u64) -> Vec<CheckEntry> {
    let grid = problem.grid();
    let mut checks = Vec::new();

    checks.push(CheckEntry::from_result(
        "contraction",
        diagnostics::check_contraction(problem, solvers::default_u_range(v)),
        |r| pass_fail(r.is_contractive),
    ));
    checks.push(CheckEntry::from_result(
        "norm_separation",
        diagnostics::check_norm_separation(problem),
        |r| pass_fail(r.pass),
    ));
    checks.push(CheckEntry::from_result(
        "weak_coercivity",
        diagnostics::check_weak_coercivity(problem, COERCIVITY_DIRECTIONS, &COERCIVITY_SCALES, seed),
        |r| match (r.lower_bound_certified, r.certificate_respected, r.monotone_growth_observed) {
            (Some(_), Some(true), _) => CheckStatus::Pass,
            (Some(_), _, _) => CheckStatus::Fail,
            (None, _, true) => CheckStatus::Estimate,
            (None, _, false) => CheckStatus::Fail,
        },
    ));
    if problem.hammerstein().is_some() {
        checks.push(CheckEntry::from_result(
            "frechet",
            diagnostics::check_frechet(problem, v, &GridFunction::constant(grid, 1.0), &DEFAULT_T_VALUES),
            |r| pass_fail(r.pass),
        ));
    } else {
        checks.push(CheckEntry::skipped("frechet", "no hammerstein kernel"));
    }
    checks.push(CheckEntry::from_result(
        "lax_milgram",
        diagnostics::check_lax_milgram(&problem.linear_operator(), LAX_MILGRAM_TRIALS, seed),
        |r| if r.min_rayleigh > 0.0 { CheckStatus::Estimate } else { CheckStatus::Fail },
    ));
    if grid.len() <= MAX_INDEX_CHECK_NODES {
        checks.push(CheckEntry::from_result(
            "fredholm_index",
            problem.jacobian(v).and_then(|j| diagnostics::fredholm_index(&j)),
            |r| pass_fail(r.index == 0 && r.dim_kernel == 0),
        ));
    } else {
        checks.push(CheckEntry::skipped("fredholm_index", "grid too large for a dense SVD"));
    }
    checks
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub dim: usize,
    pub rule: &'static str,
    pub nodes_per_dim: usize,
    pub measure: f64,
    pub nodes: Vec<Vec<f64>>,
}

impl GridSummary {
    pub fn new(grid: &Grid) -> Self {
        GridSummary {
            dim: grid.dim(),
            rule: grid.rule().name(),
            nodes_per_dim: grid.nodes_per_dim(),
            measure: grid.measure(),
            nodes: grid.nodes().map(<[f64]>::to_vec).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    pub method: Method,
    pub converged: bool,
    pub iterations: usize,
    pub residual_sup: f64,
    pub sup_distance: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub version: &'static str,
    pub command: String,
    pub problem_digest: String,
    pub grid: Option<GridSummary>,
    pub solve: Option<SolveReport>,
    pub checks: Vec<CheckEntry>,
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub continuation: Option<ContinuationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniqueness: Option<UniquenessReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_check: Option<CrossCheck>,
}

struct Timer {
    enabled: bool,
    entries: BTreeMap<String, f64>,
}

impl Timer {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        if self.enabled {
            self.entries
                .insert(name.to_string(), start.elapsed().as_secs_f64() * 1e3);
        }
        out
    }
}

/// Splits a solve outcome into (report, solver-failed?); other errors pass through.
fn split_solve(res: Result<SolveReport>) -> Result<(SolveReport, bool)> {
    match res {
        Ok(r) => Ok((r, false)),
        Err(Error::SolveFailed { partial, .. }) => Ok((*partial, true)),
        Err(e) => Err(e),
    }
}

fn solve_method(method: SolveMethod) -> Method {
    match method {
        SolveMethod::Newton | SolveMethod::Continuation => Method::Newton,
        SolveMethod::Picard => Method::Picard,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    Solve,
    Check,
    Reproduce,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Check => "check",
            Command::Reproduce => "reproduce",
        }
    }
}

/// Result of a run: the report (when input was valid) and the exit code.
pub struct Outcome {
    pub report: Option<Report>,
    pub exit_code: i32,
    pub summary: String,
}

fn input_error(e: Error) -> Outcome {
    Outcome {
        report: None,
        exit_code: EXIT_INPUT,
        summary: format!("error: {e}"),
    }
}

fn execute(command: Command, mut file: ProblemFile, opts: &RunOptions) -> Outcome {
    file.apply_overrides(&opts.overrides);
    let validated = match file.validate() {
        Ok(v) => v,
        Err(e) => return input_error(e),
    };
    let digest = match report::digest(&file) {
        Ok(d) => d,
        Err(e) => return input_error(e),
    };
    let mut timer = Timer {
        enabled: opts.timings,
        entries: BTreeMap::new(),
    };
    let loaded = match timer.time("assemble", || validated.assemble()) {
        Ok(l) => l,
        Err(e) => return input_error(e),
    };
    match run_loaded(command, &loaded, digest, &mut timer) {
        Ok(o) => o,
        Err(Error::ContinuationFailed { t, source }) => Outcome {
            report: None,
            exit_code: EXIT_SOLVER,
            summary: format!("error: continuation failed at t = {t}: {source}"),
        },
        Err(e) => input_error(e),
    }
}

fn run_loaded(command: Command, loaded: &LoadedProblem, digest: String, timer: &mut Timer) -> Result<Outcome> {
    let problem = &loaded.problem;
    let v = &loaded.rhs;
    let opts: SolverOptions = loaded.options;
    let mut report = Report {
        version: VERSION,
        command: command.name().to_string(),
        problem_digest: digest,
        grid: Some(GridSummary::new(problem.grid())),
        solve: None,
        checks: Vec::new(),
        timings_ms: BTreeMap::new(),
        continuation: None,
        uniqueness: None,
        cross_check: None,
    };
    let mut failed = false;
    let mut lines = Vec::new();

    if command == Command::Check || command == Command::Reproduce {
        report.checks = timer.time("checks", || run_check_suite(&loaded.problem, &loaded.rhs, loaded.options.seed));
        for c in &report.checks {
            lines.push(format!("check {}: {:?}", c.name, c.status).to_lowercase());
        }
    }

    if command == Command::Solve || command == Command::Reproduce {
        let primary = if loaded.method == SolveMethod::Continuation {
            let v0 = loaded.rhs_start.as_ref().expect("validated continuation");
            let steps = loaded.continuation_steps.expect("validated continuation");
            let cont = timer.time("continuation", || solvers::solve_continuation(problem, v0, v, steps, &opts))?;
            let last = cont.solutions.last().cloned().expect("steps >= 1");
            report.continuation = Some(cont);
            timer.time("solve", || solvers::solve_newton_from(problem, v, &last, &opts))
        } else {
            let m = solve_method(loaded.method);
            timer.time("solve", || solvers::solve(problem, v, m, &opts))
        };
        let (solve, solve_failed) = split_solve(primary)?;
        failed |= solve_failed;
        lines.push(match &solve.failure {
            None => format!(
                "converged: method={} iterations={} residual={:e}",
                solve.method.name(),
                solve.iterations,
                solve.residual_sup
            ),
            Some(f) => format!(
                "not converged ({f}): method={} iterations={} residual={:e}",
                solve.method.name(),
                solve.iterations,
                solve.residual_sup
            ),
        });

        if command == Command::Reproduce {
            let other = match solve.method {
                Method::Picard => Method::Newton,
                Method::Newton => Method::Picard,
            };
            let (cross, cross_failed) =
                split_solve(timer.time("cross_check", || solvers::solve(problem, v, other, &opts)))?;
            failed |= cross_failed;
            let dist = cross.solution.sup_distance(&solve.solution)?;
            lines.push(format!("cross-check {}: sup distance {dist:e}", other.name()));
            report.cross_check = Some(CrossCheck {
                method: other,
                converged: cross.converged,
                iterations: cross.iterations,
                residual_sup: cross.residual_sup,
                sup_distance: Some(dist),
                failure: cross.failure,
            });

            let probe = timer.time("uniqueness", || solvers::uniqueness_probe(problem, v, REPRODUCE_STARTS, &opts))?;
            lines.push(format!(
                "uniqueness: {} cluster(s) from {} starts, {} converged",
                probe.distinct_solutions.len(),
                probe.starts,
                probe.converged_starts
            ));
            report.uniqueness = Some(probe);
        }
        report.solve = Some(solve);
    }

    report.timings_ms = std::mem::take(&mut timer.entries);
    let exit_code = if failed {
        EXIT_SOLVER
    } else if report.checks.iter().any(|c| c.status == CheckStatus::Error) {
        EXIT_INPUT
    } else {
        EXIT_OK
    };
    Ok(Outcome {
        report: Some(report),
        exit_code,
        summary: lines.join("\n"),
    })
}

fn finish(outcome: Outcome, opts: &RunOptions) -> i32 {
    let mut code = outcome.exit_code;
    if let Some(report) = &outcome.report {
        let written = report::to_canonical_json(report)
            .and_then(|text| std::fs::write(&opts.output, text).map_err(Error::from));
        if let Err(e) = written {
            eprintln!("error: cannot write report to {}: {e}", opts.output.display());
            return EXIT_INPUT;
        }
    }
    if code == EXIT_INPUT && outcome.report.is_none() {
        eprintln!("{}", outcome.summary.replace('\n', " "));
    } else if !opts.quiet {
        println!("{}", outcome.summary);
        println!("report written to {}", opts.output.display());
    }
    if code != EXIT_OK && code != EXIT_INPUT && code != EXIT_SOLVER {
        code = EXIT_INPUT;
    }
    code
}

fn load_file(path: &Path) -> Result<ProblemFile> {
    ProblemFile::load(path).map_err(|e| match e {
        Error::Schema(msg) => Error::Schema(format!("{}: {msg}", path.display())),
        other => Error::Schema(format!("{}: {other}", path.display())),
    })
}

/// Runs a command and returns its outcome without writing anything.
pub fn evaluate_command(command: &str, target: &str, opts: &RunOptions) -> Outcome {
    let (cmd, file) = match command {
        "solve" | "check" => {
            let cmd = if command == "solve" { Command::Solve } else { Command::Check };
            match load_file(Path::new(target)) {
                Ok(f) => (cmd, f),
                Err(e) => return input_error(e),
            }
        }
        "reproduce" => match example_source(target).and_then(ProblemFile::from_json) {
            Ok(f) => (Command::Reproduce, f),
            Err(e) => return input_error(e),
        },
        other => return input_error(Error::InvalidArgument(format!("unknown command '{other}'"))),
    };
    execute(cmd, file, opts)
}

pub fn run_solve(path: &Path, opts: &RunOptions) -> i32 {
    finish(evaluate_command("solve", &path.to_string_lossy(), opts), opts)
}

pub fn run_check(path: &Path, opts: &RunOptions) -> i32 {
    finish(evaluate_command("check", &path.to_string_lossy(), opts), opts)
}

pub fn run_reproduce(example_id: &str, opts: &RunOptions) -> i32 {
    finish(evaluate_command("reproduce", example_id, opts), opts)
}

/// Runs a problem file given as JSON text and returns the report.
pub fn run_problem_json(command: &str, json: &str, opts: &RunOptions) -> Result<(Report, i32)> {
    let cmd = match command {
        "solve" => Command::Solve,
        "check" => Command::Check,
        "reproduce" => Command::Reproduce,
        other => return Err(Error::InvalidArgument(format!("unknown command '{other}'"))),
    };
    let file = ProblemFile::from_json(json)?;
    let outcome = execute(cmd, file, opts);
    match outcome.report {
        Some(r) => Ok((r, outcome.exit_code)),
        None => Err(Error::Schema(outcome.summary.trim_start_matches("error: ").to_string())),
    }
}
