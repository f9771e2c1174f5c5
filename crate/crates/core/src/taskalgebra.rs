//! Task-coupling matrices and the product multitask kernel.
//!
//! The task kernel is the clique-graph family
//! `K_task(b) = I/(1+b) + (b/(1+b)) * 11ᵀ/N`, which interpolates between
//! independent tasks (`b = 0`) and one pooled task (`b → ∞`). Its inverse
//! `A(b)` and the square roots of both share the form `α·I + β·11ᵀ/N`, so
//! every matrix here is materialized from two scalars.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Task-similarity parameter `b`. `Pooled` is the exact `b = +∞` limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Similarity {
    Finite(f64),
    Pooled,
}

/// The task-similarity parameter together with the number of tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskCoupling {
    similarity: Similarity,
    n_tasks: usize,
}

/// Which power of `A(b) = K_task(b)⁻¹` to materialize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskPower {
    /// `A(b)`
    One,
    /// `A(b)^{1/2}`
    Half,
    /// `A(b)^{-1}`, equal to the task Gram matrix.
    MinusOne,
    /// `A(b)^{-1/2}`
    MinusHalf,
}

impl TaskCoupling {
    /// Finite `b ≥ 0`. Passing `f64::INFINITY` yields the pooled configuration.
    pub fn new(b: f64, n_tasks: usize) -> Result<Self> {
        if n_tasks == 0 {
            return Err(Error::InvalidParameter("number of tasks must be >= 1".into()));
        }
        if b.is_nan() || b < 0.0 {
            return Err(Error::InvalidParameter(format!("task similarity b must be >= 0, got {b}")));
        }
        let similarity = if b.is_infinite() {
            Similarity::Pooled
        } else {
            Similarity::Finite(b)
        };
        Ok(Self { similarity, n_tasks })
    }

    /// The `b → ∞` limit: every task shares one regression.
    pub fn pooled(n_tasks: usize) -> Result<Self> {
        Self::new(f64::INFINITY, n_tasks)
    }

    pub fn independent(n_tasks: usize) -> Result<Self> {
        Self::new(0.0, n_tasks)
    }

    pub fn similarity(&self) -> Similarity {
        self.similarity
    }

    /// `b`, or `+∞` in pooled mode.
    pub fn b(&self) -> f64 {
        match self.similarity {
            Similarity::Finite(b) => b,
            Similarity::Pooled => f64::INFINITY,
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn is_pooled(&self) -> bool {
        matches!(self.similarity, Similarity::Pooled)
    }

    /// Diagonal entry of the task Gram matrix, `(b+N)/((1+b)N)`.
    pub fn diag_entry(&self) -> f64 {
        let n = self.n_tasks as f64;
        match self.similarity {
            Similarity::Finite(b) => (b + n) / ((1.0 + b) * n),
            Similarity::Pooled => 1.0 / n,
        }
    }

    /// Off-diagonal entry of the task Gram matrix, `b/((1+b)N)`.
    pub fn off_diag_entry(&self) -> f64 {
        let n = self.n_tasks as f64;
        match self.similarity {
            Similarity::Finite(b) => b / ((1.0 + b) * n),
            Similarity::Pooled => 1.0 / n,
        }
    }

    /// `k_T(i, j)`; indices are zero-based.
    pub fn entry(&self, i: usize, j: usize) -> Result<f64> {
        self.check_task(i)?;
        self.check_task(j)?;
        Ok(self.entry_unchecked(i, j))
    }

    #[inline]
    pub(crate) fn entry_unchecked(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag_entry()
        } else {
            self.off_diag_entry()
        }
    }

    pub fn check_task(&self, i: usize) -> Result<()> {
        if i >= self.n_tasks {
            Err(Error::TaskOutOfRange { index: i, n_tasks: self.n_tasks })
        } else {
            Ok(())
        }
    }

    /// The ridge that makes prior variances equal `λ` on unit-norm inputs,
    /// `(N+b)/(N+bN)`; `1/N` in pooled mode.
    pub fn matched_ridge(&self) -> f64 {
        self.diag_entry()
    }

    /// Coefficients `(α, β)` with `A(b)^p = α·I + β·11ᵀ/N`.
    ///
    /// In pooled mode only the negative powers have finite limits.
    pub fn power_coefficients(&self, power: TaskPower) -> Result<(f64, f64)> {
        match self.similarity {
            Similarity::Finite(b) => {
                let s = (1.0 + b).sqrt();
                Ok(match power {
                    TaskPower::One => (1.0 + b, -b),
                    TaskPower::Half => (s, 1.0 - s),
                    TaskPower::MinusOne => (1.0 / (1.0 + b), b / (1.0 + b)),
                    TaskPower::MinusHalf => (1.0 / s, 1.0 - 1.0 / s),
                })
            }
            Similarity::Pooled => match power {
                TaskPower::MinusOne | TaskPower::MinusHalf => Ok((0.0, 1.0)),
                TaskPower::One | TaskPower::Half => Err(Error::InvalidParameter(
                    "positive powers of A(b) diverge in pooled mode".into(),
                )),
            },
        }
    }

    /// `A(b)^p` as a dense `N×N` matrix.
    pub fn matrix_power(&self, power: TaskPower) -> Result<DMatrix<f64>> {
        let (alpha, beta) = self.power_coefficients(power)?;
        let n = self.n_tasks;
        let off = beta / n as f64;
        Ok(DMatrix::from_fn(n, n, |i, j| if i == j { alpha + off } else { off }))
    }

    /// `K_task(b)`, equal to `A(b)^{-1}`.
    pub fn task_gram(&self) -> DMatrix<f64> {
        let n = self.n_tasks;
        let (d, o) = (self.diag_entry(), self.off_diag_entry());
        DMatrix::from_fn(n, n, |i, j| if i == j { d } else { o })
    }
}

/// Functional form of the single-task kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelVariant {
    /// `s·⟨x, x'⟩`
    Linear,
    /// `s·exp(-‖x - x'‖² / (2ℓ²))`
    SquaredExponential { lengthscale: f64 },
}

/// Scalar kernel `k_X` on the input space, with a multiplicative scale `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseKernel {
    pub variant: KernelVariant,
    pub input_dim: usize,
    pub scale: f64,
}

impl BaseKernel {
    pub fn linear(input_dim: usize) -> Self {
        Self { variant: KernelVariant::Linear, input_dim, scale: 1.0 }
    }

    pub fn squared_exponential(input_dim: usize, lengthscale: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidParameter(format!("lengthscale must be positive, got {lengthscale}")));
        }
        Ok(Self { variant: KernelVariant::SquaredExponential { lengthscale }, input_dim, scale: 1.0 })
    }

    /// Squared-exponential kernel with the default unit lengthscale.
    pub fn squared_exponential_default(input_dim: usize) -> Self {
        Self {
            variant: KernelVariant::SquaredExponential { lengthscale: 1.0 },
            input_dim,
            scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel scale must be positive, got {scale}")));
        }
        self.scale = scale;
        Ok(self)
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.variant, KernelVariant::Linear)
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() })
        } else {
            Ok(())
        }
    }

    /// Evaluates `k_X(x, x')` without dimension checks.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.variant {
            KernelVariant::Linear => self.scale * dot(x, y),
            KernelVariant::SquaredExponential { lengthscale } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                self.scale * (-sq / (2.0 * lengthscale * lengthscale)).exp()
            }
        }
    }

    pub fn try_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.eval(x, y))
    }

    /// Gram matrix over a set of points.
    pub fn gram(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = points.len();
        DMatrix::from_fn(n, n, |i, j| self.eval(&points[i], &points[j]))
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `k((i,x),(j,y)) = k_T(i,j)·k_X(x,y)` with zero-based task indices.
pub fn mt_kernel(
    coupling: &TaskCoupling,
    base: &BaseKernel,
    i: usize,
    x: &[f64],
    j: usize,
    y: &[f64],
) -> Result<f64> {
    Ok(coupling.entry(i, j)? * base.try_eval(x, y)?)
}

/// Feature map of the multitask kernel for a linear base kernel: block `j`
/// of the `N·d` output holds `A^{-1/2}[j, i]·√s·x`.
pub fn mt_feature_map(
    coupling: &TaskCoupling,
    base: &BaseKernel,
    i: usize,
    x: &[f64],
) -> Result<DVector<f64>> {
    if !base.is_linear() {
        return Err(Error::UnsupportedKernel);
    }
    coupling.check_task(i)?;
    base.check_point(x)?;
    let (alpha, beta) = coupling.power_coefficients(TaskPower::MinusHalf)?;
    let n = coupling.n_tasks();
    let d = base.input_dim;
    let root_scale = base.scale.sqrt();
    let mut out = DVector::zeros(n * d);
    for j in 0..n {
        let w = beta / n as f64 + if j == i { alpha } else { 0.0 };
        if w == 0.0 {
            continue;
        }
        for k in 0..d {
            out[j * d + k] = w * root_scale * x[k];
        }
    }
    Ok(out)
}

/// Inverse of `D + 11ᵀ ⊗ P` for block-diagonal `D = diag(D_1, …, D_N)` when
/// `P` commutes with every block:
/// `D⁻¹ + D⁻¹ (11ᵀ ⊗ Q) D⁻¹` with `Q = -(I + P ΣD_l⁻¹)⁻¹ P`.
pub fn kron_sherman_morrison(blocks: &[DMatrix<f64>], p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if blocks.is_empty() {
        return Err(Error::InvalidParameter("at least one block required".into()));
    }
    let d = p.nrows();
    if p.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: p.ncols() });
    }
    let p_norm = p.norm();
    let mut inverses = Vec::with_capacity(blocks.len());
    for (l, block) in blocks.iter().enumerate() {
        if block.nrows() != d || block.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: block.nrows() });
        }
        let residual = (p * block - block * p).amax();
        let tolerance = 1e-8 * p_norm * block.norm();
        if residual > tolerance {
            return Err(Error::NotCommuting { block: l, residual, tolerance });
        }
        let inv = block
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularMatrix(format!("block {l}")))?;
        inverses.push(inv);
    }

    let mut sum_inv = DMatrix::<f64>::zeros(d, d);
    for inv in &inverses {
        sum_inv += inv;
    }
    let inner = DMatrix::<f64>::identity(d, d) + p * &sum_inv;
    let inner_inv = inner
        .try_inverse()
        .ok_or_else(|| Error::SingularMatrix("I + P·ΣD_l⁻¹".into()))?;
    let q = -(inner_inv * p);

    let n = blocks.len();
    let mut out = DMatrix::<f64>::zeros(n * d, n * d);
    for a in 0..n {
        let left = &inverses[a] * &q;
        for c in 0..n {
            let mut block = &left * &inverses[c];
            if a == c {
                block += &inverses[a];
            }
            out.view_mut((a * d, c * d), (d, d)).copy_from(&block);
        }
    }
    Ok(out)
}
