//! Discrete integral operators on a quadrature grid.
//!
//! A linear kernel `k(x, y)` becomes the Nyström matrix `A[i][j] = w_j k(x_i, x_j)`.
//! The Hammerstein operator `C(u)(x) = ∫ h(x, y, u(y)) dy` is applied node by
//! node, and its Fréchet derivative `C'(u)` is the Nyström matrix of
//! `h_u(x, y, u(y))` with `u` frozen at the current iterate.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr, Var};
use crate::grid::{Grid, GridFunction, GridId};
use crate::linalg::{self, DenseMatrix};

/// Max allowed |h_u(override) − h_u(symbolic)| on the sampled grid.
pub const DERIVATIVE_CROSS_CHECK_TOL: f64 = 1e-8;

/// Dense realization of a linear integral operator (or a Jacobian) on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NystromMatrix {
    entries: DenseMatrix,
    grid_id: GridId,
}

impl NystromMatrix {
    pub fn zeros(grid: &Grid) -> Self {
        NystromMatrix {
            entries: DenseMatrix::zeros(grid.len(), grid.len()),
            grid_id: grid.id(),
        }
    }

    pub fn entries(&self) -> &DenseMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> DenseMatrix {
        self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    pub fn grid_id(&self) -> GridId {
        self.grid_id
    }

    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        if u.grid_id() != self.grid_id {
            return Err(Error::GridMismatch("matrix and function live on different grids".into()));
        }
        u.with_values(self.entries.mul_vec(u.values())?)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entries.row(i).iter().sum()).collect()
    }

    pub fn add(&self, other: &NystromMatrix) -> Result<NystromMatrix> {
        if self.grid_id != other.grid_id {
            return Err(Error::GridMismatch("matrices live on different grids".into()));
        }
        Ok(NystromMatrix {
            entries: self.entries.add(&other.entries)?,
            grid_id: self.grid_id,
        })
    }

    /// Induced sup-norm on grid functions (max absolute row sum).
    pub fn sup_norm(&self) -> f64 {
        operator_sup_norm(&self.entries)
    }
}

/// max_i Σ_j |a_ij|: the operator norm induced by the max-norm.
pub fn operator_sup_norm(matrix: &DenseMatrix) -> f64 {
    matrix.inf_norm()
}

/// Fills `entries[i][j] = w_j · kernel(x_i, y_j[, u_j])`, rows in parallel.
fn assemble_rows(grid: &Grid, kernel: &Expr, u: Option<&[f64]>) -> Result<NystromMatrix> {
    let n = grid.len();
    let weights = grid.weights();
    let mut entries = DenseMatrix::zeros(n, n);
    entries
        .as_mut_slice()
        .par_chunks_mut(n.max(1))
        .enumerate()
        .try_for_each(|(i, row)| -> Result<()> {
            let xi = grid.node(i);
            for (j, slot) in row.iter_mut().enumerate() {
                let mut b = Bindings::spatial(xi, grid.node(j));
                if let Some(u) = u {
                    b.set(Var::U, u[j]);
                }
                let v = weights[j] * kernel.evaluate(&b)?;
                if !v.is_finite() {
                    return Err(Error::NumericDomain(format!(
                        "kernel value not finite at nodes ({i}, {j})"
                    )));
                }
                *slot = v;
            }
            Ok(())
        })?;
    Ok(NystromMatrix {
        entries,
        grid_id: grid.id(),
    })
}

/// Nyström matrix of a linear kernel `k(x, y)`.
pub fn assemble_linear(grid: &Grid, kernel: &Expr) -> Result<NystromMatrix> {
    if kernel.contains_u() {
        return Err(Error::KernelUsesU);
    }
    assemble_rows(grid, kernel, None)
}

/// `C(u)_i = Σ_j w_j h(x_i, y_j, u_j)`.
pub fn apply_hammerstein(grid: &Grid, h: &Expr, u: &GridFunction) -> Result<GridFunction> {
    grid.check(u)?;
    let weights = grid.weights();
    let uv = u.values();
    let out = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let xi = grid.node(i);
            let mut acc = 0.0;
            for j in 0..uv.len() {
                let b = Bindings::spatial(xi, grid.node(j)).with(Var::U, uv[j]);
                acc += weights[j] * h.evaluate(&b)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    u.with_values(out)
}

/// Nyström matrix of `h_u(x, y, u(y))`: `entries[i][j] = w_j h_u(x_i, y_j, u_j)`.
///
/// `h_u` is the derivative expression itself (symbolic or user supplied).
pub fn hammerstein_jacobian(grid: &Grid, h_u: &Expr, u: &GridFunction) -> Result<NystromMatrix> {
    grid.check(u)?;
    assemble_rows(grid, h_u, Some(u.values()))
}

#[derive(Debug, Clone)]
pub struct Hammerstein {
    kernel: Expr,
    derivative: Expr,
    derivative_overridden: bool,
}

impl Hammerstein {
    pub fn kernel(&self) -> &Expr {
        &self.kernel
    }

    /// The `h_u` used for Jacobians: the override when given, else symbolic.
    pub fn derivative(&self) -> &Expr {
        &self.derivative
    }

    pub fn derivative_overridden(&self) -> bool {
        self.derivative_overridden
    }
}

/// `f(u) = c·u + Σ K_k u + C(u)` on a grid.
#[derive(Debug, Clone)]
pub struct Problem {
    grid: Grid,
    linear_kernels: Vec<Expr>,
    linear_parts: Vec<NystromMatrix>,
    linear_sum: NystromMatrix,
    hammerstein: Option<Hammerstein>,
    identity_coefficient: f64,
}

#[derive(Debug, Clone)]
pub struct ProblemBuilder {
    grid: Grid,
    linear_kernels: Vec<Expr>,
    hammerstein_kernel: Option<Expr>,
    hammerstein_derivative: Option<Expr>,
    identity_coefficient: f64,
}

impl ProblemBuilder {
    pub fn linear_kernel(mut self, kernel: Expr) -> Self {
        self.linear_kernels.push(kernel);
        self
    }

    pub fn linear_kernels(mut self, kernels: impl IntoIterator<Item = Expr>) -> Self {
        self.linear_kernels.extend(kernels);
        self
    }

    pub fn hammerstein(mut self, h: Expr) -> Self {
        self.hammerstein_kernel = Some(h);
        self
    }

    pub fn hammerstein_derivative(mut self, h_u: Expr) -> Self {
        self.hammerstein_derivative = Some(h_u);
        self
    }

    pub fn identity_coefficient(mut self, c: f64) -> Self {
        self.identity_coefficient = c;
        self
    }

    pub fn build(self) -> Result<Problem> {
        if self.identity_coefficient == 0.0 || !self.identity_coefficient.is_finite() {
            return Err(Error::InvalidArgument(
                "identity coefficient must be finite and non-zero".into(),
            ));
        }
        let grid = self.grid;
        let linear_parts = self
            .linear_kernels
            .iter()
            .map(|k| assemble_linear(&grid, k))
            .collect::<Result<Vec<_>>>()?;
        let mut linear_sum = NystromMatrix::zeros(&grid);
        for part in &linear_parts {
            linear_sum = linear_sum.add(part)?;
        }

        let hammerstein = match (self.hammerstein_kernel, self.hammerstein_derivative) {
            (None, None) => None,
            (None, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "hammerstein derivative given without a hammerstein kernel".into(),
                ))
            }
            (Some(kernel), None) => Some(Hammerstein {
                derivative: kernel.differentiate_u(),
                kernel,
                derivative_overridden: false,
            }),
            (Some(kernel), Some(derivative)) => {
                let symbolic = kernel.differentiate_u();
                let max_diff = derivative_discrepancy(&grid, &symbolic, &derivative);
                if !(max_diff <= DERIVATIVE_CROSS_CHECK_TOL) {
                    return Err(Error::DerivativeMismatch { max_diff });
                }
                Some(Hammerstein {
                    kernel,
                    derivative,
                    derivative_overridden: true,
                })
            }
        };

        Ok(Problem {
            grid,
            linear_kernels: self.linear_kernels,
            linear_parts,
            linear_sum,
            hammerstein,
            identity_coefficient: self.identity_coefficient,
        })
    }
}

/// Max |a − b| over a strided subset of node pairs (≤ 64 per axis) and
/// 13 u-values in [-3, 3]. Points where either side fails to evaluate are skipped.
fn derivative_discrepancy(grid: &Grid, a: &Expr, b: &Expr) -> f64 {
    let n = grid.len();
    let stride = n.div_ceil(64).max(1);
    let us: Vec<f64> = (0..13).map(|k| -3.0 + 0.5 * k as f64).collect();
    (0..n)
        .step_by(stride)
        .map(|i| {
            let mut worst = 0.0f64;
            for j in (0..n).step_by(stride) {
                for &u in &us {
                    let bind = Bindings::spatial(grid.node(i), grid.node(j)).with(Var::U, u);
                    if let (Ok(x), Ok(y)) = (a.evaluate(&bind), b.evaluate(&bind)) {
                        let d = (x - y).abs();
                        if d.is_nan() {
                            return f64::INFINITY;
                        }
                        worst = worst.max(d);
                    }
                }
            }
            worst
        })
        .fold(0.0, f64::max)
}

impl Problem {
    pub fn builder(grid: Grid) -> ProblemBuilder {
        ProblemBuilder {
            grid,
            linear_kernels: Vec::new(),
            hammerstein_kernel: None,
            hammerstein_derivative: None,
            identity_coefficient: 1.0,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn linear_kernels(&self) -> &[Expr] {
        &self.linear_kernels
    }

    /// One Nyström matrix per linear kernel, in declaration order.
    pub fn linear_parts(&self) -> &[NystromMatrix] {
        &self.linear_parts
    }

    /// Sum of all linear Nyström matrices (zero when there are none).
    pub fn linear_sum(&self) -> &NystromMatrix {
        &self.linear_sum
    }

    pub fn hammerstein(&self) -> Option<&Hammerstein> {
        self.hammerstein.as_ref()
    }

    pub fn identity_coefficient(&self) -> f64 {
        self.identity_coefficient
    }

    pub fn is_linear(&self) -> bool {
        self.hammerstein.is_none()
    }

    /// C(u), or zero when there is no Hammerstein part.
    pub fn apply_nonlinear(&self, u: &GridFunction) -> Result<GridFunction> {
        match &self.hammerstein {
            Some(h) => apply_hammerstein(&self.grid, h.kernel(), u),
            None => {
                self.grid.check(u)?;
                Ok(GridFunction::zeros(&self.grid))
            }
        }
    }

    /// K u + C(u), the perturbation applied to u.
    pub fn apply_perturbation(&self, u: &GridFunction) -> Result<GridFunction> {
        self.grid.check(u)?;
        let ku = self.linear_sum.apply(u)?;
        match &self.hammerstein {
            Some(_) => ku.lin_comb(1.0, &self.apply_nonlinear(u)?, 1.0),
            None => Ok(ku),
        }
    }

    /// f(u) = c·u + K u + C(u).
    pub fn apply_f(&self, u: &GridFunction) -> Result<GridFunction> {
        let p = self.apply_perturbation(u)?;
        u.lin_comb(self.identity_coefficient, &p, 1.0)
    }

    /// C'(u) as a Nyström matrix (zero when there is no Hammerstein part).
    pub fn hammerstein_jacobian(&self, u: &GridFunction) -> Result<NystromMatrix> {
        match &self.hammerstein {
            Some(h) => hammerstein_jacobian(&self.grid, h.derivative(), u),
            None => {
                self.grid.check(u)?;
                Ok(NystromMatrix::zeros(&self.grid))
            }
        }
    }

    /// f'(u) = c·I + K + C'(u).
    pub fn jacobian(&self, u: &GridFunction) -> Result<DenseMatrix> {
        let mut j = self.linear_sum.entries().add_diagonal(self.identity_coefficient);
        if self.hammerstein.is_some() {
            j = j.add(self.hammerstein_jacobian(u)?.entries())?;
        }
        Ok(j)
    }

    /// c·I + K, the linear part of f.
    pub fn linear_operator(&self) -> DenseMatrix {
        self.linear_sum.entries().add_diagonal(self.identity_coefficient)
    }

    /// Solves the linear system `A x = b` for grid functions.
    pub fn solve_linear_system(&self, a: &DenseMatrix, b: &GridFunction) -> Result<GridFunction> {
        self.grid.check(b)?;
        b.with_values(linalg::linear_solve(a, b.values())?)
    }
}
