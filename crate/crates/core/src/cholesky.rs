//! Row-appendable lower-triangular Cholesky factor.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative jitter applied once to a non-positive pivot before giving up.
pub const JITTER_SCALE: f64 = 1e-10;

#[derive(Debug, Clone, Default)]
pub struct IncrementalCholesky {
    /// Row `j` holds `L[j, 0..=j]`.
    rows: Vec<Vec<f64>>,
    /// Diagonal of the factored matrix, including any jitter that was applied.
    diag: Vec<f64>,
    trace: f64,
    jitter_events: usize,
}

impl IncrementalCholesky {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn jitter_events(&self) -> usize {
        self.jitter_events
    }

    pub fn pivot(&self, j: usize) -> f64 {
        self.rows[j][j]
    }

    /// `ln|M|` of the factored matrix.
    pub fn log_det(&self) -> f64 {
        self.rows.iter().enumerate().map(|(j, r)| 2.0 * r[j].ln()).sum()
    }

    /// Solves `L z = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.len());
        for (j, row) in self.rows.iter().enumerate() {
            let mut s = b[j];
            for k in 0..j {
                s -= row[k] * b[k];
            }
            b[j] = s / row[j];
        }
    }

    /// Solves `Lᵀ z = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(b.len(), n);
        for j in (0..n).rev() {
            let zj = b[j] / self.rows[j][j];
            b[j] = zj;
            let row = &self.rows[j];
            for k in 0..j {
                b[k] -= row[k] * zj;
            }
        }
    }

    /// Solves `(L Lᵀ) z = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut z = b.to_vec();
        self.solve_lower_in_place(&mut z);
        self.solve_upper_in_place(&mut z);
        z
    }

    /// Appends one row/column to the factored matrix. `cross[j]` is the new
    /// off-diagonal entry against existing row `j` and `diag` the new diagonal
    /// entry. Returns the squared pivot actually used.
    pub fn push(&mut self, cross: &[f64], diag: f64) -> Result<f64> {
        let n = self.len();
        debug_assert_eq!(cross.len(), n);
        let mut row = cross.to_vec();
        self.solve_lower_in_place(&mut row);
        let sq: f64 = row.iter().map(|v| v * v).sum();
        let mut used_diag = diag;
        let mut pivot_sq = diag - sq;
        if !(pivot_sq > 0.0 && pivot_sq.is_finite()) {
            let jitter = JITTER_SCALE * (self.trace + diag).abs().max(f64::MIN_POSITIVE) / (n + 1) as f64;
            used_diag = diag + jitter;
            pivot_sq = used_diag - sq;
            self.jitter_events += 1;
            if !(pivot_sq > 0.0 && pivot_sq.is_finite()) {
                return Err(Error::NumericalDegeneracy(format!(
                    "non-positive Cholesky pivot {pivot_sq:.3e} at row {n} after jitter"
                )));
            }
        }
        row.push(pivot_sq.sqrt());
        self.rows.push(row);
        self.diag.push(used_diag);
        self.trace += used_diag;
        Ok(pivot_sq)
    }

    /// Full factorization of a symmetric positive definite matrix.
    pub fn factorize(m: &DMatrix<f64>) -> Result<Self> {
        let mut out = Self::new();
        for j in 0..m.nrows() {
            let cross: Vec<f64> = (0..j).map(|k| m[(j, k)]).collect();
            out.push(&cross, m[(j, j)])?;
        }
        Ok(out)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| if j <= i { self.rows[i][j] } else { 0.0 })
    }

    /// Relative Frobenius error of `L Lᵀ` against `m`, ignoring recorded jitter.
    pub fn reconstruction_drift(&self, m: &DMatrix<f64>) -> f64 {
        let l = self.to_matrix();
        let mut target = m.clone();
        for (j, d) in self.diag.iter().enumerate() {
            target[(j, j)] = *d;
        }
        let denom = target.norm().max(f64::MIN_POSITIVE);
        (&l * l.transpose() - target).norm() / denom
    }
}
