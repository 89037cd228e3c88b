//! Solvers for `f(u) = v`.
//!
//! * Picard: `u_{n+1} = (v − K u_n − C(u_n)) / c`, started at `u_0 = v`.
//! * Newton: `f'(u_n) δ = v − f(u_n)`, `u_{n+1} = u_n + δ`, started at `u_0 = v`.
//! * Continuation along `v_t = (1 − t) v0 + t v1`, warm started.
//! * A multistart probe that looks for more than one preimage of `v`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics;
use crate::error::{Error, Result, SolveFailure};
use crate::grid::GridFunction;
use crate::linalg::{self, LuFactors};
use crate::operators::Problem;

/// Consecutive growing steps that signal divergence.
const DIVERGENCE_RUN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Picard,
    Newton,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Picard => "picard",
            Method::Newton => "newton",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Compare the assembled Jacobian against a difference quotient on the
    /// first Newton iteration.
    pub fd_validation: bool,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 500,
            fd_validation: true,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub solution: GridFunction,
    pub method: Method,
    pub iterations: usize,
    /// sup-norm of f(solution) − v, recomputed at completion.
    pub residual_sup: f64,
    /// ‖u_{n+1} − u_n‖ per iteration.
    pub step_sizes: Vec<f64>,
    /// max_n step_n / step_{n−1} (Picard only).
    pub contraction_ratio_observed: Option<f64>,
    /// Estimated Lipschitz constant of the fixed-point map (Picard only).
    pub contraction_estimate: Option<f64>,
    /// κⁿ/(1−κ)·step_1, present when the estimate is below 1.
    pub a_priori_bound: Option<f64>,
    /// Sup-norm mismatch between J·m and a difference quotient (Newton only).
    pub fd_check_error: Option<f64>,
    pub converged: bool,
    pub failure: Option<String>,
    pub warnings: Vec<String>,
}

fn fail(failure: SolveFailure, mut report: SolveReport) -> Error {
    report.failure = Some(failure.to_string());
    Error::SolveFailed {
        failure,
        partial: Box::new(report),
    }
}

fn observed_ratio(steps: &[f64]) -> Option<f64> {
    steps
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .reduce(f64::max)
}

/// Default range of u sampled for sup |h_u| around a right-hand side.
pub fn default_u_range(v: &GridFunction) -> f64 {
    1.0 + 2.0 * v.sup_norm().unwrap_or(0.0)
}

/// Lipschitz estimate of `u ↦ (v − K u − C(u)) / c` in the sup-norm.
///
/// Exact for the linear part; the Hammerstein part uses sup |h_u| sampled on
/// `[-u_range, u_range]`, so it is an estimate rather than a bound.
pub fn picard_contraction_estimate(problem: &Problem, u_range: f64) -> f64 {
    let linear = problem.linear_sum().sup_norm();
    let nonlinear = diagnostics::hammerstein_derivative_sup(problem, u_range)
        .map_or(0.0, |s| s * problem.grid().measure());
    (linear + nonlinear) / problem.identity_coefficient().abs()
}

pub fn solve_picard(problem: &Problem, v: &GridFunction, opts: &SolverOptions) -> Result<SolveReport> {
    solve_picard_from(problem, v, v, opts)
}

/// Converged reports satisfy `residual_sup <= RESIDUAL_FACTOR * tol`.
pub const RESIDUAL_FACTOR: f64 = 10.0;

pub fn solve_picard_from(
    problem: &Problem,
    v: &GridFunction,
    u0: &GridFunction,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    problem.grid().check(v)?;
    problem.grid().check(u0)?;

    let c = problem.identity_coefficient();
    let kappa = picard_contraction_estimate(problem, default_u_range(v).max(default_u_range(u0)));
    let mut warnings = Vec::new();
    if kappa >= 1.0 {
        let msg = format!("NotContractiveWarning: estimated contraction constant {kappa:.6} >= 1");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut u = u0.clone();
    let mut steps: Vec<f64> = Vec::new();
    let mut growing = 0usize;
    let mut converged = false;
    let mut failure = None;

    // Steps are propagated in correction form, δ_{n+1} = −(K δ_n + C(u_{n+1}) − C(u_n)) / c,
    // so step sizes carry relative rather than absolute rounding error.
    let mut delta: Option<GridFunction> = None;
    let mut c_at_u: Option<GridFunction> = None;
    let linear = problem.is_linear();
    for iteration in 1..=opts.max_iter {
        let next_delta = (|| -> Result<(GridFunction, Option<GridFunction>)> {
            let cu = if linear { None } else { Some(problem.apply_nonlinear(&u)?) };
            let d = match (&delta, &c_at_u) {
                (Some(d), prev_cu) => {
                    let mut kd = problem.linear_sum().apply(d)?;
                    if let (Some(cu), Some(prev)) = (&cu, prev_cu) {
                        kd = kd.lin_comb(1.0, &cu.sub(prev)?, 1.0)?;
                    }
                    kd.scale(-1.0 / c)?
                }
                (None, _) => {
                    let mut p = problem.linear_sum().apply(&u)?;
                    if let Some(cu) = &cu {
                        p = p.lin_comb(1.0, cu, 1.0)?;
                    }
                    v.lin_comb(1.0 / c, &p, -1.0 / c)?.sub(&u)?
                }
            };
            Ok((d, cu))
        })();
        let (d, cu) = match next_delta {
            Ok(n) => n,
            Err(Error::NumericDomain(_)) => {
                failure = Some(SolveFailure::Divergence { iteration });
                break;
            }
            Err(e) => return Err(e),
        };
        let step = d.sup_norm()?;
        if let Some(&prev) = steps.last() {
            growing = if step > prev { growing + 1 } else { 0 };
        }
        steps.push(step);
        u = match u.lin_comb(1.0, &d, 1.0) {
            Ok(n) => n,
            Err(Error::NumericDomain(_)) => {
                failure = Some(SolveFailure::Divergence { iteration });
                break;
            }
            Err(e) => return Err(e),
        };
        delta = Some(d);
        c_at_u = cu;
        if step <= opts.tol {
            // below the rounding floor steps can vanish while the residual stays put
            let residual = problem.apply_f(&u).and_then(|fu| fu.sup_distance(v))?;
            if residual <= RESIDUAL_FACTOR * opts.tol {
                converged = true;
                break;
            }
        }
        if growing >= DIVERGENCE_RUN {
            failure = Some(SolveFailure::Divergence { iteration });
            break;
        }
    }
    if !converged && failure.is_none() {
        failure = Some(SolveFailure::MaxIterExceeded {
            iterations: steps.len(),
        });
    }

    let residual_sup = problem
        .apply_f(&u)
        .and_then(|fu| fu.sup_distance(v))
        .unwrap_or(f64::INFINITY);
    let a_priori_bound = match steps.first() {
        Some(&s1) if kappa < 1.0 => Some(kappa.powi(steps.len() as i32) / (1.0 - kappa) * s1),
        _ => None,
    };
    let report = SolveReport {
        solution: u,
        method: Method::Picard,
        iterations: steps.len(),
        residual_sup,
        contraction_ratio_observed: observed_ratio(&steps),
        step_sizes: steps,
        contraction_estimate: Some(kappa),
        a_priori_bound,
        fd_check_error: None,
        converged,
        failure: None,
        warnings,
    };
    match failure {
        None => Ok(report),
        Some(f) => Err(fail(f, report)),
    }
}

pub fn solve_newton(problem: &Problem, v: &GridFunction, opts: &SolverOptions) -> Result<SolveReport> {
    solve_newton_from(problem, v, v, opts)
}

/// Sup-norm gap between `f'(u)·m` and `(f(u + t m) − f(u)) / t` for `m ≡ 1`.
fn jacobian_fd_gap(problem: &Problem, u: &GridFunction, jac: &linalg::DenseMatrix) -> Result<f64> {
    let grid = problem.grid();
    let m = GridFunction::constant(grid, 1.0);
    let t = 1e-7 * (1.0 + u.sup_norm()?);
    let fu = problem.apply_f(u)?;
    let fut = problem.apply_f(&u.lin_comb(1.0, &m, t)?)?;
    let quotient = fut.lin_comb(1.0 / t, &fu, -1.0 / t)?;
    let jm = u.with_values(jac.mul_vec(m.values())?)?;
    Ok(quotient.sup_distance(&jm)? / (1.0 + jm.sup_norm()?))
}

pub fn solve_newton_from(
    problem: &Problem,
    v: &GridFunction,
    u0: &GridFunction,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    problem.grid().check(v)?;
    problem.grid().check(u0)?;

    let mut u = u0.clone();
    let mut steps = Vec::new();
    let mut warnings = Vec::new();
    let mut fd_check_error = None;
    let mut converged = false;
    let mut failure = None;
    let mut residual_sup = f64::INFINITY;

    for iteration in 1..=opts.max_iter {
        let attempt = (|| -> Result<(GridFunction, f64)> {
            let r = v.sub(&problem.apply_f(&u)?)?;
            let jac = problem.jacobian(&u)?;
            if iteration == 1 && opts.fd_validation && !problem.is_linear() {
                let gap = jacobian_fd_gap(problem, &u, &jac)?;
                if gap > 1e-4 {
                    let msg = format!(
                        "jacobian disagrees with difference quotient (relative gap {gap:.3e})"
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
                fd_check_error = Some(gap);
            }
            let delta = u.with_values(linalg::linear_solve(&jac, r.values())?)?;
            let step = delta.sup_norm()?;
            Ok((u.lin_comb(1.0, &delta, 1.0)?, step))
        })();
        let (next, step) = match attempt {
            Ok(x) => x,
            Err(Error::SingularMatrix { .. }) | Err(Error::InaccurateSolve { .. }) => {
                failure = Some(SolveFailure::SingularJacobian { iteration });
                break;
            }
            Err(Error::NumericDomain(_)) => {
                failure = Some(SolveFailure::Divergence { iteration });
                break;
            }
            Err(e) => return Err(e),
        };
        steps.push(step);
        u = next;
        residual_sup = match problem.apply_f(&u).and_then(|fu| fu.sup_distance(v)) {
            Ok(r) => r,
            Err(Error::NumericDomain(_)) => {
                failure = Some(SolveFailure::Divergence { iteration });
                break;
            }
            Err(e) => return Err(e),
        };
        // a small step only counts once the residual agrees
        if residual_sup <= opts.tol || (step <= opts.tol && residual_sup <= RESIDUAL_FACTOR * opts.tol) {
            converged = true;
            break;
        }
    }
    if !converged && failure.is_none() {
        failure = Some(SolveFailure::MaxIterExceeded {
            iterations: steps.len(),
        });
    }

    let report = SolveReport {
        solution: u,
        method: Method::Newton,
        iterations: steps.len(),
        residual_sup,
        step_sizes: steps,
        contraction_ratio_observed: None,
        contraction_estimate: None,
        a_priori_bound: None,
        fd_check_error,
        converged,
        failure: None,
        warnings,
    };
    match failure {
        None => Ok(report),
        Some(f) => Err(fail(f, report)),
    }
}

pub fn solve(problem: &Problem, v: &GridFunction, method: Method, opts: &SolverOptions) -> Result<SolveReport> {
    match method {
        Method::Picard => solve_picard(problem, v, opts),
        Method::Newton => solve_newton(problem, v, opts),
    }
}

/// Newton from `u0`, retried as Picard from `u0` if the Jacobian is singular.
fn solve_with_fallback(
    problem: &Problem,
    v: &GridFunction,
    u0: &GridFunction,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    match solve_newton_from(problem, v, u0, opts) {
        Err(Error::SolveFailed {
            failure: SolveFailure::SingularJacobian { .. },
            ..
        }) => solve_picard_from(problem, v, u0, opts),
        other => other,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuationReport {
    pub steps: usize,
    pub parameters: Vec<f64>,
    pub solutions: Vec<GridFunction>,
    pub methods: Vec<Method>,
    pub iterations: Vec<usize>,
    pub max_consecutive_jump: f64,
    /// Sup distance between the last solution and a cold solve at `v1`.
    pub endpoint_distance: f64,
    pub endpoint_matches_direct: bool,
}

pub fn solve_continuation(
    problem: &Problem,
    v0: &GridFunction,
    v1: &GridFunction,
    steps: usize,
    opts: &SolverOptions,
) -> Result<ContinuationReport> {
    if steps < 1 {
        return Err(Error::InvalidArgument("continuation needs at least one step".into()));
    }
    problem.grid().check(v0)?;
    problem.grid().check(v1)?;

    let mut parameters = Vec::with_capacity(steps + 1);
    let mut solutions: Vec<GridFunction> = Vec::with_capacity(steps + 1);
    let mut methods = Vec::with_capacity(steps + 1);
    let mut iterations = Vec::with_capacity(steps + 1);
    let mut max_jump = 0.0f64;

    let delta = v1.sub(v0)?;
    let mut prev_rhs: Option<GridFunction> = None;
    for j in 0..=steps {
        let t = j as f64 / steps as f64;
        // v0 + t (v1 - v0) reproduces v0 bitwise when v0 = v1; the endpoint is v1 itself
        let vt = if j == steps { v1.clone() } else { v0.lin_comb(1.0, &delta, t)? };
        let (solution, method, iters) = match (&prev_rhs, solutions.last()) {
            // identical subproblem: its solution is already known
            (Some(r), Some(prev)) if *r == vt => (prev.clone(), *methods.last().expect("aligned"), 0),
            _ => {
                let start = solutions.last().cloned().unwrap_or_else(|| vt.clone());
                let report = solve_with_fallback(problem, &vt, &start, opts).map_err(|e| {
                    Error::ContinuationFailed {
                        t,
                        source: Box::new(e),
                    }
                })?;
                (report.solution, report.method, report.iterations)
            }
        };
        if let Some(prev) = solutions.last() {
            max_jump = max_jump.max(solution.sup_distance(prev)?);
        }
        parameters.push(t);
        methods.push(method);
        iterations.push(iters);
        solutions.push(solution);
        prev_rhs = Some(vt);
    }

    let direct = solve_with_fallback(problem, v1, v1, opts).map_err(|e| Error::ContinuationFailed {
        t: 1.0,
        source: Box::new(e),
    })?;
    let endpoint_distance = direct.solution.sup_distance(solutions.last().expect("steps >= 1"))?;

    Ok(ContinuationReport {
        steps,
        parameters,
        solutions,
        methods,
        iterations,
        max_consecutive_jump: max_jump,
        endpoint_distance,
        endpoint_matches_direct: endpoint_distance <= 10.0 * opts.tol,
    })
}

pub const DEFAULT_CLUSTER_RADIUS: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub starts: usize,
    /// Initial values are drawn i.i.d. uniform in [-init_radius, init_radius].
    pub init_radius: f64,
    pub converged_starts: usize,
    pub failed_starts: Vec<usize>,
    pub distinct_solutions: Vec<GridFunction>,
    pub cluster_sizes: Vec<usize>,
    pub cluster_radius: f64,
    pub all_converged: bool,
    /// Smallest LU pivot of f'(u*) relative to its largest entry, per representative.
    pub jacobian_min_pivot_ratio: Vec<f64>,
    pub jacobian_nonsingular_at_each: bool,
}

/// Runs Newton from `starts` seeded random initial functions and clusters
/// the converged solutions. Evidence about uniqueness, not a proof of it.
pub fn uniqueness_probe(
    problem: &Problem,
    v: &GridFunction,
    starts: usize,
    opts: &SolverOptions,
) -> Result<UniquenessReport> {
    if starts < 1 {
        return Err(Error::InvalidArgument("uniqueness probe needs at least one start".into()));
    }
    opts.validate()?;
    let grid = problem.grid();
    grid.check(v)?;

    let radius = default_u_range(v);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let initial: Vec<GridFunction> = (0..starts)
        .map(|_| {
            let values = (0..grid.len()).map(|_| rng.random_range(-radius..=radius)).collect();
            GridFunction::new(grid, values)
        })
        .collect::<Result<_>>()?;

    let outcomes: Vec<Result<SolveReport>> = initial
        .par_iter()
        .map(|u0| solve_newton_from(problem, v, u0, opts))
        .collect();

    let mut reps: Vec<GridFunction> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    let mut failed = Vec::new();
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(report) => {
                let mut placed = false;
                for (rep, size) in reps.iter().zip(sizes.iter_mut()) {
                    if report.solution.sup_distance(rep)? <= DEFAULT_CLUSTER_RADIUS {
                        *size += 1;
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    reps.push(report.solution);
                    sizes.push(1);
                }
            }
            Err(Error::SolveFailed { .. }) => failed.push(idx),
            Err(e) => return Err(e),
        }
    }

    let pivots: Vec<f64> = reps
        .iter()
        .map(|u| {
            let jac = problem.jacobian(u)?;
            Ok(LuFactors::factor(&jac).map_or(0.0, |lu| lu.min_pivot_ratio()))
        })
        .collect::<Result<_>>()?;
    let nonsingular = pivots.iter().all(|&p| p >= linalg::PIVOT_THRESHOLD);

    Ok(UniquenessReport {
        starts,
        init_radius: radius,
        converged_starts: starts - failed.len(),
        all_converged: failed.is_empty(),
        failed_starts: failed,
        distinct_solutions: reps,
        cluster_sizes: sizes,
        cluster_radius: DEFAULT_CLUSTER_RADIUS,
        jacobian_min_pivot_ratio: pivots,
        jacobian_nonsingular_at_each: nonsingular,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::grid::{DomainSpec, Grid, Rule};

    fn grid(m: usize) -> Grid {
        Grid::build(&DomainSpec::interval(0.0, 1.0).unwrap(), Rule::Trapezoid, m).unwrap()
    }

    fn e(s: &str) -> Expr {
        Expr::parse(s).unwrap()
    }

    /// Root of c + 0.25 sin(c) = 1 by bisection on [0, 1].
    fn bisect_sine_fixed_point() -> f64 {
        let g = |c: f64| c + 0.25 * c.sin() - 1.0;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn picard_constant_kernel() {
        let g = grid(201);
        let p = Problem::builder(g.clone()).linear_kernel(e("0.5")).build().unwrap();
        let v = GridFunction::constant(&g, 1.0);
        let r = solve_picard(&p, &v, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        // stopping on step <= tol leaves an error of at most κ/(1-κ)·last step
        let last = *r.step_sizes.last().unwrap();
        for x in r.solution.values() {
            assert!((x - 2.0 / 3.0).abs() <= last + 1e-15);
        }
        assert!(r.contraction_ratio_observed.unwrap() <= 0.5 + 1e-9);
        assert_eq!(r.step_sizes.len(), r.iterations);
        assert!(r.residual_sup <= 1e-9);
        let bound = r.a_priori_bound.unwrap();
        assert!(bound >= (r.solution.values()[0] - 2.0 / 3.0).abs());
    }

    #[test]
    fn picard_identity_takes_one_iteration() {
        let g = grid(21);
        let p = Problem::builder(g.clone()).build().unwrap();
        let v = GridFunction::from_fn(&g, |x| x[0].sin()).unwrap();
        let r = solve_picard(&p, &v, &SolverOptions::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.solution, v);
    }

    #[test]
    fn picard_and_newton_find_sine_fixed_point() {
        let g = grid(51);
        let p = Problem::builder(g.clone()).hammerstein(e("0.25*sin(u)")).build().unwrap();
        let v = GridFunction::constant(&g, 1.0);
        let c = bisect_sine_fixed_point();
        assert!((c - 0.8176).abs() < 1e-4);
        let opts = SolverOptions::default();
        let pic = solve_picard(&p, &v, &opts).unwrap();
        let newt = solve_newton(&p, &v, &opts).unwrap();
        for r in [&pic, &newt] {
            for x in r.solution.values() {
                assert!((x - c).abs() <= 1e-10, "{:?}: {x} vs {c}", r.method);
            }
        }
        assert!(pic.solution.sup_distance(&newt.solution).unwrap() <= 10.0 * opts.tol);
        assert!(newt.iterations <= 8);
        assert!(newt.fd_check_error.unwrap() < 1e-4);
    }

    #[test]
    fn newton_on_linear_problem_takes_one_step() {
        let g = grid(41);
        let p = Problem::builder(g.clone())
            .linear_kernel(e("0.4*cos(x*y)"))
            .linear_kernel(e("0.2*x*y"))
            .build()
            .unwrap();
        let v = GridFunction::from_fn(&g, |x| 1.0 + x[0]).unwrap();
        let r = solve_newton(&p, &v, &SolverOptions::default()).unwrap();
        assert_eq!(r.iterations, 1);
        let direct = p.solve_linear_system(&p.linear_operator(), &v).unwrap();
        assert!(r.solution.sup_distance(&direct).unwrap() < 1e-14);
    }

    #[test]
    fn zero_rhs_gives_fixed_point_of_negated_operators() {
        // f(x) = 0 <=> (K1 + C1)(x) = x with K1 = -K, C1 = -C
        let g = grid(41);
        let p = Problem::builder(g.clone())
            .linear_kernel(e("0.3*x*y - 0.1"))
            .hammerstein(e("0.2*sin(u + x) + 0.1*y"))
            .build()
            .unwrap();
        let zero = GridFunction::zeros(&g);
        let r = solve_newton(&p, &zero, &SolverOptions::default()).unwrap();
        let neg = p.apply_perturbation(&r.solution).unwrap().scale(-1.0).unwrap();
        assert!(neg.sup_distance(&r.solution).unwrap() < 1e-9);
        assert!(r.solution.sup_norm().unwrap() > 1e-3);
    }

    #[test]
    fn picard_detects_divergence() {
        let g = grid(21);
        let p = Problem::builder(g.clone()).linear_kernel(e("2")).build().unwrap();
        let v = GridFunction::constant(&g, 1.0);
        match solve_picard(&p, &v, &SolverOptions::default()) {
            Err(Error::SolveFailed {
                failure: SolveFailure::Divergence { .. },
                partial,
            }) => {
                assert!(!partial.converged);
                assert!(partial.warnings[0].starts_with("NotContractiveWarning"));
                assert!(partial.a_priori_bound.is_none());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn newton_reports_singular_jacobian() {
        // f = I - K with K ≡ 1: f(1) = 0, singular
        let g = grid(11);
        let p = Problem::builder(g.clone()).linear_kernel(e("-1")).build().unwrap();
        let v = GridFunction::constant(&g, 1.0);
        assert!(matches!(
            solve_newton(&p, &v, &SolverOptions::default()),
            Err(Error::SolveFailed {
                failure: SolveFailure::SingularJacobian { iteration: 1 },
                ..
            })
        ));
    }

    #[test]
    fn max_iter_keeps_partial_report() {
        let g = grid(21);
        let p = Problem::builder(g.clone()).linear_kernel(e("0.9*x")).build().unwrap();
        let v = GridFunction::constant(&g, 1.0);
        let opts = SolverOptions {
            max_iter: 3,
            ..Default::default()
        };
        match solve_picard(&p, &v, &opts) {
            Err(Error::SolveFailed {
                failure: SolveFailure::MaxIterExceeded { iterations: 3 },
                partial,
            }) => {
                assert_eq!(partial.step_sizes.len(), 3);
                assert!(partial.failure.as_deref().unwrap().contains("MaxIterExceeded"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn continuation_with_equal_endpoints() {
        let g = grid(21);
        let p = Problem::builder(g.clone()).hammerstein(e("0.25*sin(u)")).build().unwrap();
        let v = GridFunction::constant(&g, 1.0);
        let r = solve_continuation(&p, &v, &v, 3, &SolverOptions::default()).unwrap();
        assert_eq!(r.solutions.len(), 4);
        assert_eq!(r.max_consecutive_jump, 0.0);
        assert!(r.endpoint_matches_direct);
    }

    #[test]
    fn continuation_linear_ramp() {
        let g = grid(201);
        let p = Problem::builder(g.clone()).linear_kernel(e("0.5")).build().unwrap();
        let v0 = GridFunction::zeros(&g);
        let v1 = GridFunction::constant(&g, 1.0);
        let mut jumps = Vec::new();
        for steps in [4, 8] {
            let r = solve_continuation(&p, &v0, &v1, steps, &SolverOptions::default()).unwrap();
            for (t, u) in r.parameters.iter().zip(&r.solutions) {
                for x in u.values() {
                    assert!((x - 2.0 / 3.0 * t).abs() <= 1e-10);
                }
            }
            jumps.push(r.max_consecutive_jump);
        }
        assert!(jumps[1] <= jumps[0]);
    }

    #[test]
    fn uniqueness_probe_identity() {
        let g = grid(11);
        let p = Problem::builder(g.clone()).build().unwrap();
        let v = GridFunction::from_fn(&g, |x| x[0]).unwrap();
        let r = uniqueness_probe(&p, &v, 8, &SolverOptions::default()).unwrap();
        assert_eq!(r.distinct_solutions.len(), 1);
        // u0 + (v - u0) equals v up to rounding
        assert!(r.distinct_solutions[0].sup_distance(&v).unwrap() <= 1e-15);
        assert!(r.all_converged && r.jacobian_nonsingular_at_each);
        assert_eq!(r.cluster_sizes, vec![8]);
    }

    #[test]
    fn uniqueness_probe_finds_both_roots() {
        // f(u) = u - ∫ 1.2 tanh(u) dy on a tiny grid: u ≡ 0 and two symmetric roots
        let g = grid(3);
        let p = Problem::builder(g.clone()).hammerstein(e("-1.5*tanh(u)")).build().unwrap();
        let v = GridFunction::zeros(&g);
        let opts = SolverOptions {
            fd_validation: false,
            max_iter: 100,
            ..Default::default()
        };
        let r = uniqueness_probe(&p, &v, 32, &opts).unwrap();
        assert!(r.distinct_solutions.len() >= 2, "{:?}", r.cluster_sizes);
        for (i, a) in r.distinct_solutions.iter().enumerate() {
            for b in &r.distinct_solutions[i + 1..] {
                assert!(a.sup_distance(b).unwrap() > r.cluster_radius);
            }
        }
    }

    #[test]
    fn solves_are_deterministic() {
        let g = grid(31);
        let p = Problem::builder(g.clone())
            .linear_kernel(e("0.3*cos(x-y)"))
            .hammerstein(e("0.2*tanh(u)*x"))
            .build()
            .unwrap();
        let v = GridFunction::from_fn(&g, |x| x[0] * x[0] + 1.0).unwrap();
        let opts = SolverOptions::default();
        let a = uniqueness_probe(&p, &v, 6, &opts).unwrap();
        let b = uniqueness_probe(&p, &v, 6, &opts).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let a = solve_newton(&p, &v, &opts).unwrap();
        let b = solve_newton(&p, &v, &opts).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
