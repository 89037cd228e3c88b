//! JSON problem files.
//!
//! ```json
//! {
//!   "domain": { "intervals": [[0, 1]] },
//!   "quadrature": { "rule": "trapezoid", "nodes_per_dim": 201 },
//!   "linear_kernels": ["0.4*cos(x*y)", "0.2*x*y"],
//!   "hammerstein_kernel": "0.25*sin(u)",
//!   "rhs": "1 + x",
//!   "solver": { "method": "picard", "tol": 1e-10, "max_iter": 500, "seed": 0 },
//!   "continuation": { "rhs_start": "0", "steps": 4 }
//! }
//! ```
//!
//! Unknown keys are rejected. Everything is validated (including parsing of
//! every expression) before any operator is assembled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};
use crate::grid::{DomainSpec, Grid, GridFunction, Rule, DEFAULT_NODES_1D, DEFAULT_NODES_2D};
use crate::operators::Problem;
use crate::solvers::{Method, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub intervals: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSection {
    #[serde(default = "default_rule")]
    pub rule: Rule,
    #[serde(default)]
    pub nodes_per_dim: Option<usize>,
}

fn default_rule() -> Rule {
    Rule::Trapezoid
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Picard,
    Newton,
    Continuation,
}

impl SolveMethod {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "picard" => Some(SolveMethod::Picard),
            "newton" => Some(SolveMethod::Newton),
            "continuation" => Some(SolveMethod::Continuation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_method")]
    pub method: SolveMethod,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_method() -> SolveMethod {
    SolveMethod::Picard
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationSection {
    pub rhs_start: String,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub domain: DomainSection,
    #[serde(default)]
    pub quadrature: Option<QuadratureSection>,
    #[serde(default)]
    pub linear_kernels: Vec<String>,
    #[serde(default)]
    pub hammerstein_kernel: Option<String>,
    #[serde(default)]
    pub hammerstein_derivative: Option<String>,
    #[serde(default)]
    pub identity_coefficient: Option<f64>,
    pub rhs: String,
    #[serde(default)]
    pub solver: Option<SolverSection>,
    #[serde(default)]
    pub continuation: Option<ContinuationSection>,
}

/// Command-line overrides applied on top of a problem file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub tol: Option<f64>,
    pub nodes: Option<usize>,
    pub seed: Option<u64>,
    pub method: Option<Method>,
}

/// A problem file that passed validation; assembling it is all that is left.
#[derive(Debug, Clone)]
pub struct ValidatedProblem {
    pub file: ProblemFile,
    pub domain: DomainSpec,
    pub rule: Rule,
    pub nodes_per_dim: usize,
    pub linear_kernels: Vec<Expr>,
    pub hammerstein_kernel: Option<Expr>,
    pub hammerstein_derivative: Option<Expr>,
    pub identity_coefficient: f64,
    pub rhs: Expr,
    pub method: SolveMethod,
    pub options: SolverOptions,
    pub continuation: Option<(Expr, usize)>,
}

/// An assembled problem with its right-hand side sampled on the grid.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: Problem,
    pub rhs: GridFunction,
    pub rhs_start: Option<GridFunction>,
    pub method: SolveMethod,
    pub options: SolverOptions,
    pub continuation_steps: Option<usize>,
}

fn field_error(field: &str, err: Error) -> Error {
    Error::Schema(format!("{field}: {err}"))
}

fn parse_field(field: &str, source: &str, allowed: &[Var]) -> Result<Expr> {
    let e = Expr::parse(source).map_err(|err| field_error(field, err))?;
    if let Some(v) = e.free_vars().into_iter().find(|v| !allowed.contains(v)) {
        return Err(Error::Schema(format!(
            "{field}: variable '{}' is not allowed here",
            v.name()
        )));
    }
    Ok(e)
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if o.tol.is_some() || o.seed.is_some() || o.method.is_some() {
            let solver = self.solver.get_or_insert(SolverSection {
                method: default_method(),
                tol: None,
                max_iter: None,
                seed: None,
            });
            if let Some(t) = o.tol {
                solver.tol = Some(t);
            }
            if let Some(s) = o.seed {
                solver.seed = Some(s);
            }
            if let Some(m) = o.method {
                solver.method = match m {
                    Method::Picard => SolveMethod::Picard,
                    Method::Newton => SolveMethod::Newton,
                };
            }
        }
        if let Some(n) = o.nodes {
            let q = self.quadrature.get_or_insert(QuadratureSection {
                rule: default_rule(),
                nodes_per_dim: None,
            });
            q.nodes_per_dim = Some(n);
        }
    }

    pub fn validate(&self) -> Result<ValidatedProblem> {
        let domain =
            DomainSpec::new(self.domain.intervals.clone()).map_err(|e| field_error("domain.intervals", e))?;
        let dim = domain.dim();
        let rule = self.quadrature.as_ref().map_or(Rule::Trapezoid, |q| q.rule);
        let nodes_per_dim = self
            .quadrature
            .as_ref()
            .and_then(|q| q.nodes_per_dim)
            .unwrap_or(if dim == 1 { DEFAULT_NODES_1D } else { DEFAULT_NODES_2D });
        if nodes_per_dim < 2 {
            return Err(Error::Schema(format!(
                "quadrature.nodes_per_dim: must be at least 2, got {nodes_per_dim}"
            )));
        }

        let (spatial_x, spatial_xy): (Vec<Var>, Vec<Var>) = if dim == 1 {
            (vec![Var::X1], vec![Var::X1, Var::Y1])
        } else {
            (vec![Var::X1, Var::X2], vec![Var::X1, Var::X2, Var::Y1, Var::Y2])
        };
        let mut with_u = spatial_xy.clone();
        with_u.push(Var::U);

        let linear_kernels = self
            .linear_kernels
            .iter()
            .enumerate()
            .map(|(i, s)| parse_field(&format!("linear_kernels[{i}]"), s, &spatial_xy))
            .collect::<Result<Vec<_>>>()?;
        let hammerstein_kernel = self
            .hammerstein_kernel
            .as_deref()
            .map(|s| parse_field("hammerstein_kernel", s, &with_u))
            .transpose()?;
        let hammerstein_derivative = self
            .hammerstein_derivative
            .as_deref()
            .map(|s| parse_field("hammerstein_derivative", s, &with_u))
            .transpose()?;
        if hammerstein_derivative.is_some() && hammerstein_kernel.is_none() {
            return Err(Error::Schema(
                "hammerstein_derivative: given without hammerstein_kernel".into(),
            ));
        }
        let identity_coefficient = self.identity_coefficient.unwrap_or(1.0);
        if identity_coefficient == 0.0 || !identity_coefficient.is_finite() {
            return Err(Error::Schema("identity_coefficient: must be finite and non-zero".into()));
        }
        let rhs = parse_field("rhs", &self.rhs, &spatial_x)?;

        let defaults = SolverOptions::default();
        let solver = self.solver.as_ref();
        let method = solver.map_or(SolveMethod::Picard, |s| s.method);
        let options = SolverOptions {
            tol: solver.and_then(|s| s.tol).unwrap_or(defaults.tol),
            max_iter: solver.and_then(|s| s.max_iter).unwrap_or(defaults.max_iter),
            seed: solver.and_then(|s| s.seed).unwrap_or(defaults.seed),
            fd_validation: defaults.fd_validation,
        };
        if !(options.tol > 0.0) || !options.tol.is_finite() {
            return Err(Error::Schema(format!("solver.tol: must be positive, got {}", options.tol)));
        }
        if options.max_iter < 1 {
            return Err(Error::Schema("solver.max_iter: must be at least 1".into()));
        }

        let continuation = match &self.continuation {
            Some(c) => {
                if c.steps < 1 {
                    return Err(Error::Schema("continuation.steps: must be at least 1".into()));
                }
                Some((parse_field("continuation.rhs_start", &c.rhs_start, &spatial_x)?, c.steps))
            }
            None => None,
        };
        if method == SolveMethod::Continuation && continuation.is_none() {
            return Err(Error::Schema(
                "solver.method: 'continuation' requires a continuation section".into(),
            ));
        }

        Ok(ValidatedProblem {
            file: self.clone(),
            domain,
            rule,
            nodes_per_dim,
            linear_kernels,
            hammerstein_kernel,
            hammerstein_derivative,
            identity_coefficient,
            rhs,
            method,
            options,
            continuation,
        })
    }
}

impl ValidatedProblem {
    /// Builds the grid, assembles the operators and samples the right-hand sides.
    pub fn assemble(&self) -> Result<LoadedProblem> {
        let grid = Grid::build(&self.domain, self.rule, self.nodes_per_dim)?;
        let mut builder = Problem::builder(grid.clone())
            .linear_kernels(self.linear_kernels.iter().cloned())
            .identity_coefficient(self.identity_coefficient);
        if let Some(h) = &self.hammerstein_kernel {
            builder = builder.hammerstein(h.clone());
        }
        if let Some(d) = &self.hammerstein_derivative {
            builder = builder.hammerstein_derivative(d.clone());
        }
        let problem = builder.build()?;
        let rhs = GridFunction::from_expr(&grid, &self.rhs).map_err(|e| field_error("rhs", e))?;
        let rhs_start = self
            .continuation
            .as_ref()
            .map(|(e, _)| GridFunction::from_expr(&grid, e).map_err(|e| field_error("continuation.rhs_start", e)))
            .transpose()?;
        Ok(LoadedProblem {
            problem,
            rhs,
            rhs_start,
            method: self.method,
            options: self.options,
            continuation_steps: self.continuation.as_ref().map(|c| c.1),
        })
    }
}
