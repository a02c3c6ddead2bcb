use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GsrError, Result};

/// Last-layer weights `ψ ∈ R^{d×K}`.
///
/// The flat parameter vector is `vec(ψ)`, column-stacked: entry `k·d + j`
/// is `ψ[j, k]`, so class `k` owns the contiguous block `k·d .. (k+1)·d`.
/// Every gradient and Hessian in this crate uses that layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    psi: DMatrix<f64>,
}

impl ClassifierParams {
    pub fn new(psi: DMatrix<f64>) -> Result<Self> {
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(GsrError::NonFinite("classifier weights".into()));
        }
        Ok(Self { psi })
    }

    pub fn zeros(dim: usize, n_classes: usize) -> Self {
        Self {
            psi: DMatrix::zeros(dim, n_classes),
        }
    }

    /// Inverse of [`to_vec`](Self::to_vec).
    pub fn from_vec(dim: usize, n_classes: usize, flat: &DVector<f64>) -> Result<Self> {
        if flat.len() != dim * n_classes {
            return Err(GsrError::DimensionMismatch(format!(
                "flat parameter length {} != {dim}·{n_classes}",
                flat.len()
            )));
        }
        Self::new(DMatrix::from_column_slice(dim, n_classes, flat.as_slice()))
    }

    pub fn to_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(self.psi.as_slice())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn dim(&self) -> usize {
        self.psi.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.psi.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.psi.len()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.psi.norm_squared()
    }
}

/// Nonnegative per-sample weights over the held-out set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights(Vec<f64>);

pub const SIMPLEX_TOL: f64 = 1e-12;

impl SampleWeights {
    /// Validates finiteness and nonnegativity; does not normalize.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            return Err(GsrError::NonFinite(format!("sample weight {i}")));
        }
        if let Some(i) = w.iter().position(|&v| v < 0.0) {
            return Err(GsrError::OffSimplex(format!("weight {i} is {}", w[i])));
        }
        Ok(Self(w))
    }

    /// Finite weights of either sign, for finite-difference probes that
    /// step below zero.
    pub(crate) fn new_signed(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            return Err(GsrError::NonFinite(format!("sample weight {i}")));
        }
        Ok(Self(w))
    }

    /// `1/n` everywhere.
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// `e_i`, the indicator of sample `i`.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Self(w)
    }

    /// Scales to unit L1 norm; `None` if all weights are zero.
    pub fn normalized(&self) -> Option<Self> {
        let s = self.l1();
        (s > 0.0).then(|| Self(self.0.iter().map(|v| v / s).collect()))
    }

    pub fn is_normalized(&self) -> bool {
        (self.l1() - 1.0).abs() <= SIMPLEX_TOL
    }

    pub fn l1(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Settings for the regularized inner fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerSolveConfig {
    /// λ in `(λ/2)‖ψ‖²_F`.
    pub l2_coeff: f64,
    /// Stop when `‖∇‖_∞ ≤ grad_tol`.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Number of curvature pairs kept by L-BFGS.
    pub memory: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
}

impl Default for InnerSolveConfig {
    fn default() -> Self {
        Self {
            l2_coeff: 0.1,
            grad_tol: 1e-8,
            max_iters: 1000,
            memory: 10,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
        }
    }
}

impl InnerSolveConfig {
    pub fn with_l2(self, l2_coeff: f64) -> Self {
        Self { l2_coeff, ..self }
    }

    pub fn with_grad_tol(self, grad_tol: f64) -> Self {
        Self { grad_tol, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l2_coeff > 0.0 && self.l2_coeff.is_finite()) {
            return Err(GsrError::config("l2_coeff", "must be positive"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(GsrError::config("grad_tol", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(GsrError::config("max_iters", "must be at least 1"));
        }
        if self.memory == 0 {
            return Err(GsrError::config("memory", "must be at least 1"));
        }
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(GsrError::config(
                "wolfe_c1",
                format!(
                    "need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                    self.wolfe_c1, self.wolfe_c2
                ),
            ));
        }
        Ok(())
    }
}
