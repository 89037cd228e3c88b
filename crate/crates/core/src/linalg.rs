//! Dense row-major matrices and direct solves.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative pivot threshold below which a matrix is declared singular.
pub const PIVOT_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::from_row_major(rows.len(), cols, rows.concat())
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// y = A x, each row summed left to right.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} columns, vector has {} entries",
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect();
        Ok(DenseMatrix { data, ..*self })
    }

    pub fn scale(&self, alpha: f64) -> DenseMatrix {
        DenseMatrix {
            data: self.data.iter().map(|v| alpha * v).collect(),
            ..*self
        }
    }

    /// Adds `alpha` to every diagonal entry.
    pub fn add_diagonal(&self, alpha: f64) -> DenseMatrix {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m.data[i * self.cols + i] += alpha;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Induced ∞-norm: max_i Σ_j |a_ij|.
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| compensated_sum(self.row(i).iter().map(|v| v.abs())))
            .fold(0.0, f64::max)
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// Singular values, descending.
    pub fn singular_values(&self) -> Vec<f64> {
        if self.rows == 0 || self.cols == 0 {
            return Vec::new();
        }
        let mut sv: Vec<f64> = self.to_nalgebra().singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }
}

/// LU factorization with row partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct LuFactors {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    min_pivot: f64,
    scale: f64,
}

impl LuFactors {
    /// Fails with `SingularMatrix` when a pivot magnitude drops below
    /// `PIVOT_THRESHOLD` times the largest initial entry magnitude.
    pub fn factor(a: &DenseMatrix) -> Result<LuFactors> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        let n = a.rows();
        let scale = a.max_abs();
        let threshold = PIVOT_THRESHOLD * scale;
        let mut lu = a.as_slice().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;

        for k in 0..n {
            let (p, pivot_abs) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot_abs < threshold || pivot_abs == 0.0 {
                return Err(Error::SingularMatrix {
                    pivot: pivot_abs,
                    column: k,
                });
            }
            min_pivot = min_pivot.min(pivot_abs);
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        lu[i * n + j] -= factor * lu[k * n + j];
                    }
                }
            }
        }
        Ok(LuFactors {
            n,
            lu,
            perm,
            min_pivot,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Smallest pivot magnitude relative to the largest entry of the input.
    pub fn min_pivot_ratio(&self) -> f64 {
        if self.n == 0 {
            1.0
        } else {
            self.min_pivot / self.scale
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "rhs has {} entries, matrix is {n}x{n}",
                b.len()
            )));
        }
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        Ok(x)
    }
}

fn residual_inf(a: &DenseMatrix, x: &[f64], b: &[f64]) -> Result<(Vec<f64>, f64)> {
    let ax = a.mul_vec(x)?;
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((r, norm))
}

/// Solves `A x = b` by LU with partial pivoting.
///
/// The result satisfies `‖Ax − b‖_∞ ≤ 1e-10·(1 + ‖b‖_∞)`; one step of
/// iterative refinement is tried before giving up with `InaccurateSolve`.
pub fn linear_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let lu = LuFactors::factor(a)?;
    let mut x = lu.solve(b)?;
    let bound = 1e-10 * (1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let (r, mut res) = residual_inf(a, &x, b)?;
    if res > bound {
        let dx = lu.solve(&r)?;
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        res = residual_inf(a, &x, b)?.1;
    }
    if !(res <= bound) {
        return Err(Error::InaccurateSolve { residual: res, bound });
    }
    Ok(x)
}

/// Neumaier compensated summation.
pub(crate) fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    /// Householder reflector I − 2 w wᵀ / wᵀw.
    fn reflector(w: &[f64]) -> DenseMatrix {
        let n = w.len();
        let ww: f64 = w.iter().map(|x| x * x).sum();
        let mut h = DenseMatrix::identity(n);
        for i in 0..n {
            for j in 0..n {
                h.set(i, j, h.get(i, j) - 2.0 * w[i] * w[j] / ww);
            }
        }
        h
    }

    fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let n = a.rows();
        let mut c = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                c.set(i, j, (0..n).map(|k| a.get(i, k) * b.get(k, j)).sum());
            }
        }
        c
    }

    /// U diag(σ) V with orthogonal U, V and σ in [1e-6, 1]: condition number ≤ 1e6.
    fn arb_conditioned() -> impl Strategy<Value = (DenseMatrix, Vec<f64>)> {
        (2..12usize).prop_flat_map(|n| {
            (
                prop::collection::vec(0.1..1.0f64, n),
                prop::collection::vec(0.1..1.0f64, n),
                prop::collection::vec(-6.0..0.0f64, n),
                prop::collection::vec(-100.0..100.0f64, n),
            )
                .prop_map(|(w1, w2, logs, b)| {
                    let n = w1.len();
                    let w2: Vec<f64> = w2.iter().enumerate().map(|(i, x)| if i % 2 == 0 { -x } else { *x }).collect();
                    let sigma = DenseMatrix::from_diagonal(&logs.iter().map(|l| 10f64.powf(*l)).collect::<Vec<_>>());
                    let a = matmul(&matmul(&reflector(&w1), &sigma), &reflector(&w2));
                    assert_eq!(a.rows(), n);
                    (a, b)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn backward_residual_is_small((a, b) in arb_conditioned()) {
            let x = linear_solve(&a, &b).unwrap();
            let ax = a.mul_vec(&x).unwrap();
            let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let res = ax.iter().zip(&b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
            prop_assert!(res <= 1e-10 * (1.0 + bnorm), "residual {res}");
        }
    }
}
