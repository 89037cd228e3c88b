//! Numerical toolkit for perturbed operator equations `f(u) = v` with
//! `f = c·I + K + C` on a discretized space of continuous functions: `K` is a
//! sum of linear integral operators and `C` a Hammerstein operator.
//!
//! Modules, bottom up:
//!
//! * [`expr`] kernel expressions, evaluation and symbolic ∂/∂u
//! * [`grid`] quadrature grids and grid functions
//! * [`linalg`] dense matrices, LU, singular values
//! * [`operators`] Nyström matrices, the Hammerstein operator, [`operators::Problem`]
//! * [`solvers`] Picard, Newton, continuation, multistart uniqueness probe
//! * [`diagnostics`] hypothesis checks and Fredholm index computations
//! * [`problem_file`], [`report`], [`cli`] file formats and the command-line front end

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod grid;
pub mod linalg;
pub mod operators;
pub mod problem_file;
pub mod report;
pub mod solvers;

pub use error::{Error, Result, SolveFailure};
pub use expr::{Bindings, Expr, Var};
pub use grid::{DomainSpec, Grid, GridFunction, Rule};
pub use linalg::DenseMatrix;
pub use operators::{NystromMatrix, Problem};
pub use solvers::{Method, SolveReport, SolverOptions};
