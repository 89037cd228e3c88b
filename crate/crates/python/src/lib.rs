//! Python bindings for `fredkit_core`. Structured results come back as plain
//! dicts, decoded from the same canonical JSON the command-line tool writes.

use std::collections::HashMap;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fredkit_core::cli::{self, RunOptions};
use fredkit_core::diagnostics;
use fredkit_core::linalg::DenseMatrix;
use fredkit_core::report;
use fredkit_core::solvers::{self, SolverOptions};
use fredkit_core::{DomainSpec, Error, Method};

create_exception!(fredkit, SolveError, PyRuntimeError);

fn to_py(err: Error) -> PyErr {
    match err {
        Error::SolveFailed { .. } | Error::ContinuationFailed { .. } => SolveError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_dict<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = report::to_canonical_json(value).map_err(to_py)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_method(name: &str) -> PyResult<Method> {
    match name {
        "picard" => Ok(Method::Picard),
        "newton" => Ok(Method::Newton),
        other => Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    }
}

fn matrix_from_rows(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(&rows).map_err(to_py)
}

/// A kernel expression over x1, x2, y1, y2 (aliases x, y) and u.
#[pyclass(name = "Expr", module = "fredkit", frozen)]
struct PyExpr {
    inner: fredkit_core::Expr,
}

#[pymethods]
impl PyExpr {
    #[new]
    fn new(source: &str) -> PyResult<Self> {
        Ok(PyExpr {
            inner: fredkit_core::Expr::parse(source).map_err(to_py)?,
        })
    }

    /// Evaluates with keyword bindings, e.g. `e.evaluate(x=0.5, u=1.0)`.
    #[pyo3(signature = (**bindings))]
    fn evaluate(&self, bindings: Option<HashMap<String, f64>>) -> PyResult<f64> {
        self.inner
            .evaluate_map(&bindings.unwrap_or_default())
            .map_err(to_py)
    }

    /// Symbolic partial derivative with respect to u.
    fn derivative_u(&self) -> PyExpr {
        PyExpr {
            inner: self.inner.differentiate_u(),
        }
    }

    fn free_vars(&self) -> Vec<&'static str> {
        self.inner.free_vars().into_iter().map(|v| v.name()).collect()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Expr('{}')", self.inner)
    }
}

/// A tensor-product quadrature grid on an axis-aligned box.
#[pyclass(name = "Grid", module = "fredkit", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid {
    inner: fredkit_core::Grid,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (intervals, rule = "trapezoid", nodes_per_dim = None))]
    fn new(intervals: Vec<(f64, f64)>, rule: &str, nodes_per_dim: Option<usize>) -> PyResult<Self> {
        let domain = DomainSpec::new(intervals.iter().map(|&(a, b)| [a, b]).collect()).map_err(to_py)?;
        let rule = fredkit_core::Rule::from_name(rule)
            .ok_or_else(|| PyValueError::new_err(format!("unknown quadrature rule '{rule}'")))?;
        let m = nodes_per_dim.unwrap_or(if domain.dim() == 1 {
            fredkit_core::grid::DEFAULT_NODES_1D
        } else {
            fredkit_core::grid::DEFAULT_NODES_2D
        });
        Ok(PyGrid {
            inner: fredkit_core::Grid::build(&domain, rule, m).map_err(to_py)?,
        })
    }

    #[getter]
    fn nodes(&self) -> Vec<Vec<f64>> {
        self.inner.nodes().map(<[f64]>::to_vec).collect()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn measure(&self) -> f64 {
        self.inner.measure()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Quadrature sum of nodal values.
    fn integrate(&self, values: Vec<f64>) -> PyResult<f64> {
        let f = fredkit_core::GridFunction::new(&self.inner, values).map_err(to_py)?;
        self.inner.integrate(&f).map_err(to_py)
    }

    /// Samples a spatial expression at the nodes.
    fn sample(&self, expr: &str) -> PyResult<Vec<f64>> {
        let e = fredkit_core::Expr::parse(expr).map_err(to_py)?;
        Ok(fredkit_core::GridFunction::from_expr(&self.inner, &e)
            .map_err(to_py)?
            .into_values())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid(dim={}, rule='{}', nodes_per_dim={})",
            self.inner.dim(),
            self.inner.rule().name(),
            self.inner.nodes_per_dim()
        )
    }
}

/// The discretized equation f(u) = c·u + K u + C(u).
#[pyclass(name = "Problem", module = "fredkit", frozen)]
struct PyProblem {
    inner: fredkit_core::Problem,
}

impl PyProblem {
    /// Right-hand side given as an expression string or as nodal values.
    fn rhs(&self, rhs: &Bound<'_, PyAny>) -> PyResult<fredkit_core::GridFunction> {
        let grid = self.inner.grid();
        if let Ok(src) = rhs.extract::<String>() {
            let e = fredkit_core::Expr::parse(&src).map_err(to_py)?;
            fredkit_core::GridFunction::from_expr(grid, &e).map_err(to_py)
        } else {
            let values: Vec<f64> = rhs.extract()?;
            fredkit_core::GridFunction::new(grid, values).map_err(to_py)
        }
    }
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (grid, linear_kernels = Vec::new(), hammerstein = None, hammerstein_derivative = None, identity_coefficient = 1.0))]
    fn new(
        grid: &PyGrid,
        linear_kernels: Vec<String>,
        hammerstein: Option<&str>,
        hammerstein_derivative: Option<&str>,
        identity_coefficient: f64,
    ) -> PyResult<Self> {
        let parse = |s: &str| fredkit_core::Expr::parse(s).map_err(to_py);
        let mut b = fredkit_core::Problem::builder(grid.inner.clone()).identity_coefficient(identity_coefficient);
        for k in &linear_kernels {
            b = b.linear_kernel(parse(k)?);
        }
        if let Some(h) = hammerstein {
            b = b.hammerstein(parse(h)?);
        }
        if let Some(hu) = hammerstein_derivative {
            b = b.hammerstein_derivative(parse(hu)?);
        }
        Ok(PyProblem {
            inner: b.build().map_err(to_py)?,
        })
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid {
            inner: self.inner.grid().clone(),
        }
    }

    /// f(u) at nodal values `u`.
    fn apply(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        let u = fredkit_core::GridFunction::new(self.inner.grid(), u).map_err(to_py)?;
        Ok(self.inner.apply_f(&u).map_err(to_py)?.into_values())
    }

    /// f'(u) as a list of rows.
    fn jacobian(&self, u: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let u = fredkit_core::GridFunction::new(self.inner.grid(), u).map_err(to_py)?;
        Ok(self.inner.jacobian(&u).map_err(to_py)?.to_rows())
    }

    #[pyo3(signature = (rhs, method = "picard", tol = 1e-10, max_iter = 500, seed = 0))]
    fn solve<'py>(
        &self,
        py: Python<'py>,
        rhs: &Bound<'py, PyAny>,
        method: &str,
        tol: f64,
        max_iter: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let v = self.rhs(rhs)?;
        let opts = SolverOptions {
            tol,
            max_iter,
            seed,
            ..SolverOptions::default()
        };
        let method = parse_method(method)?;
        let report = py
            .detach(|| solvers::solve(&self.inner, &v, method, &opts))
            .map_err(to_py)?;
        to_dict(py, &report)
    }

    /// Runs the hypothesis checks and returns them as a list of dicts.
    #[pyo3(signature = (rhs, seed = 0))]
    fn checks<'py>(&self, py: Python<'py>, rhs: &Bound<'py, PyAny>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let v = self.rhs(rhs)?;
        let entries = py.detach(|| cli::run_check_suite(&self.inner, &v, seed));
        to_dict(py, &entries)
    }

    #[pyo3(signature = (rhs_start, rhs_end, steps, tol = 1e-10, max_iter = 500))]
    fn continuation<'py>(
        &self,
        py: Python<'py>,
        rhs_start: &Bound<'py, PyAny>,
        rhs_end: &Bound<'py, PyAny>,
        steps: usize,
        tol: f64,
        max_iter: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let (v0, v1) = (self.rhs(rhs_start)?, self.rhs(rhs_end)?);
        let opts = SolverOptions {
            tol,
            max_iter,
            ..SolverOptions::default()
        };
        let report = py
            .detach(|| solvers::solve_continuation(&self.inner, &v0, &v1, steps, &opts))
            .map_err(to_py)?;
        to_dict(py, &report)
    }

    #[pyo3(signature = (rhs, starts = 16, seed = 0, tol = 1e-10))]
    fn uniqueness<'py>(
        &self,
        py: Python<'py>,
        rhs: &Bound<'py, PyAny>,
        starts: usize,
        seed: u64,
        tol: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let v = self.rhs(rhs)?;
        let opts = SolverOptions {
            tol,
            seed,
            ..SolverOptions::default()
        };
        let report = py
            .detach(|| solvers::uniqueness_probe(&self.inner, &v, starts, &opts))
            .map_err(to_py)?;
        to_dict(py, &report)
    }

    fn norm_separation<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &diagnostics::check_norm_separation(&self.inner).map_err(to_py)?)
    }

    #[pyo3(signature = (u, m = None))]
    fn frechet<'py>(&self, py: Python<'py>, u: Vec<f64>, m: Option<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let grid = self.inner.grid();
        let u = fredkit_core::GridFunction::new(grid, u).map_err(to_py)?;
        let m = match m {
            Some(m) => fredkit_core::GridFunction::new(grid, m).map_err(to_py)?,
            None => fredkit_core::GridFunction::constant(grid, 1.0),
        };
        let r = diagnostics::check_frechet(&self.inner, &u, &m, &diagnostics::DEFAULT_T_VALUES).map_err(to_py)?;
        to_dict(py, &r)
    }
}

/// Rank, kernel dimension, range codimension and index of a matrix given as rows.
#[pyfunction]
fn fredholm_index<'py>(py: Python<'py>, rows: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
    let a = matrix_from_rows(rows)?;
    to_dict(py, &diagnostics::fredholm_index(&a).map_err(to_py)?)
}

/// Sampled min |uᵀAu| / uᵀu over seeded random unit vectors.
#[pyfunction]
#[pyo3(signature = (rows, trials = 256, seed = 0))]
fn lax_milgram<'py>(py: Python<'py>, rows: Vec<Vec<f64>>, trials: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let a = matrix_from_rows(rows)?;
    to_dict(py, &diagnostics::check_lax_milgram(&a, trials, seed).map_err(to_py)?)
}

/// Runs a problem file given as JSON text; returns (report, exit_code).
#[pyfunction]
#[pyo3(signature = (problem_json, command = "solve"))]
fn run<'py>(py: Python<'py>, problem_json: &str, command: &str) -> PyResult<(Bound<'py, PyAny>, i32)> {
    let (report, code) = py
        .detach(|| cli::run_problem_json(command, problem_json, &RunOptions::default()))
        .map_err(to_py)?;
    Ok((to_dict(py, &report)?, code))
}

/// Full check + solve + cross-check + uniqueness pipeline on a built-in example.
#[pyfunction]
fn reproduce<'py>(py: Python<'py>, example_id: &str) -> PyResult<Bound<'py, PyAny>> {
    let source = cli::example_source(example_id).map_err(to_py)?;
    let (report, _) = py
        .detach(|| cli::run_problem_json("reproduce", source, &RunOptions::default()))
        .map_err(to_py)?;
    to_dict(py, &report)
}

#[pymodule]
fn fredkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", cli::VERSION)?;
    m.add("SolveError", m.py().get_type::<SolveError>())?;
    m.add_class::<PyExpr>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(fredholm_index, m)?)?;
    m.add_function(wrap_pyfunction!(lax_milgram, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(reproduce, m)?)?;
    Ok(())
}
