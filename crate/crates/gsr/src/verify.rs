//! Independent checks: finite-difference retraining oracles, Jacobian and
//! spectral checks, and reference reweighting baselines.
//!
//! Nothing here goes through the influence-function code path. The
//! meta-gradient oracle re-solves the inner problem at perturbed weights
//! and differences the resulting target risks.

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{rng_from_seed, EmbeddingDataset};
use crate::error::{GsrError, Result};
use crate::linear_model::{
    data_hessian, fit_last_layer, group_risks, hessian, per_sample_gradients, weighted_gradient,
    ClassifierParams, InnerSolveConfig, SampleWeights,
};

/// Inner tolerance the oracles solve to, whatever the caller configured.
pub const ORACLE_GRAD_TOL: f64 = 1e-10;

/// Relative-error denominators never drop below this fraction of the
/// largest reference magnitude, so entries that are zero up to
/// finite-difference noise are judged on the table's scale.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    /// Weight index, parameter index, or flattened `(sample, group)` index.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn from_entries(entries: Vec<GradCheckEntry>, tolerance: f64) -> Self {
        let max_abs_error = entries.iter().map(|e| e.abs_error).fold(0.0, f64::max);
        let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
        Self {
            entries,
            max_abs_error,
            max_rel_error,
            tolerance,
            passed: max_rel_error <= tolerance,
        }
    }

    /// Entries whose relative error exceeds the tolerance.
    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.rel_error > self.tolerance)
    }
}

/// Entrywise comparison of two equally shaped matrices.
///
/// Relative error is `|a − n| / max(|n|, RELATIVE_FLOOR·max|n|, 1e-300)`.
/// Entries are flattened row-major.
pub fn compare_tables(
    analytic: &DMatrix<f64>,
    numeric: &DMatrix<f64>,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if analytic.shape() != numeric.shape() {
        return Err(GsrError::DimensionMismatch(format!(
            "analytic {:?} vs numeric {:?}",
            analytic.shape(),
            numeric.shape()
        )));
    }
    let floor = (RELATIVE_FLOOR * numeric.amax()).max(1e-300);
    let cols = analytic.ncols();
    let entries = (0..analytic.nrows())
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .map(|(i, j)| {
            let (a, n) = (analytic[(i, j)], numeric[(i, j)]);
            let abs_error = (a - n).abs();
            GradCheckEntry {
                index: i * cols + j,
                analytic: a,
                numeric: n,
                abs_error,
                rel_error: abs_error / n.abs().max(floor),
            }
        })
        .collect();
    Ok(GradCheckReport::from_entries(entries, tolerance))
}

/// Inner solve for the oracles: L-BFGS to [`ORACLE_GRAD_TOL`], then Newton
/// steps while they keep shrinking the gradient.
pub fn oracle_fit(
    ds: &EmbeddingDataset,
    w: &SampleWeights,
    inner: &InnerSolveConfig,
    init: &ClassifierParams,
) -> Result<ClassifierParams> {
    let cfg = inner.with_grad_tol(inner.grad_tol.min(ORACLE_GRAD_TOL));
    let mut psi = fit_last_layer(ds, w, &cfg, init)?;
    let mut gnorm = weighted_gradient(ds, w, &psi, &cfg)?.amax();
    for _ in 0..4 {
        let g = weighted_gradient(ds, w, &psi, &cfg)?;
        let h = hessian(ds, w, &psi, &cfg)?;
        let Some(chol) = Cholesky::new(h) else { break };
        let step = chol.solve(&g);
        let cand = ClassifierParams::from_vec(ds.dim(), ds.n_classes(), &(psi.to_vec() - step))?;
        let cand_norm = weighted_gradient(ds, w, &cand, &cfg)?.amax();
        if cand_norm >= gnorm {
            break;
        }
        psi = cand;
        gnorm = cand_norm;
    }
    Ok(psi)
}

/// Central differences of every target group's risk under `wᵢ ± h`, each
/// side a fresh inner solve. Perturbed weights are not renormalized.
pub fn finite_diff_weight_gradient(
    heldout: &EmbeddingDataset,
    target: &EmbeddingDataset,
    w: &SampleWeights,
    inner: &InnerSolveConfig,
    h: f64,
) -> Result<DMatrix<f64>> {
    if !(1e-6..=1e-3).contains(&h) {
        return Err(GsrError::config("h", format!("step must lie in [1e-6, 1e-3], got {h}")));
    }
    let n = heldout.len();
    let m = target.nonempty_group_indices()?.len();
    let base = oracle_fit(heldout, w, inner, &ClassifierParams::zeros(heldout.dim(), heldout.n_classes()))?;
    let mut out = DMatrix::zeros(n, m);
    for i in 0..n {
        let mut plus = w.as_slice().to_vec();
        plus[i] += h;
        let mut minus = w.as_slice().to_vec();
        minus[i] -= h;
        let r_plus = perturbed_risks(heldout, target, plus, inner, &base)?;
        let r_minus = perturbed_risks(heldout, target, minus, inner, &base)?;
        for g in 0..m {
            out[(i, g)] = (r_plus[g] - r_minus[g]) / (2.0 * h);
        }
    }
    Ok(out)
}

fn perturbed_risks(
    heldout: &EmbeddingDataset,
    target: &EmbeddingDataset,
    w: Vec<f64>,
    inner: &InnerSolveConfig,
    warm: &ClassifierParams,
) -> Result<Vec<f64>> {
    let w = SampleWeights::new_signed(w)?;
    let psi = oracle_fit(heldout, &w, inner, warm)?;
    group_risks(target, &psi)
}

/// Differentiates `weighted_gradient` w.r.t. each `wᵢ` (ψ fixed) and
/// compares the result with per-sample gradient row `i`.
///
/// One entry per weight: `analytic`/`numeric` are the L2 norms of the two
/// vectors, `abs_error` the norm of their difference.
pub fn jacobian_check(
    heldout: &EmbeddingDataset,
    w: &SampleWeights,
    psi: &ClassifierParams,
    inner: &InnerSolveConfig,
    h: f64,
) -> Result<GradCheckReport> {
    let rows = per_sample_gradients(heldout, psi)?;
    let mut entries = Vec::with_capacity(heldout.len());
    for i in 0..heldout.len() {
        let mut plus = w.as_slice().to_vec();
        plus[i] += h;
        let mut minus = w.as_slice().to_vec();
        minus[i] -= h;
        let gp = weighted_gradient(heldout, &SampleWeights::new_signed(plus)?, psi, inner)?;
        let gm = weighted_gradient(heldout, &SampleWeights::new_signed(minus)?, psi, inner)?;
        let numeric = (gp - gm) / (2.0 * h);
        let analytic = rows.row(i).transpose();
        let abs_error = (&analytic - &numeric).norm();
        let scale = analytic.norm();
        entries.push(GradCheckEntry {
            index: i,
            analytic: scale,
            numeric: numeric.norm(),
            abs_error,
            rel_error: if scale > 0.0 { abs_error / scale } else { abs_error },
        });
    }
    Ok(GradCheckReport::from_entries(entries, 1e-6))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub min_eigenvalue: f64,
    pub lambda: f64,
    pub passed: bool,
}

/// Smallest eigenvalue of a symmetric matrix, via Householder
/// tridiagonalization and implicit symmetric QR; passes iff it is at
/// least `λ − 1e-9`.
pub fn spectral_check(h: &DMatrix<f64>, lambda: f64) -> Result<SpectralReport> {
    if !h.is_square() {
        return Err(GsrError::DimensionMismatch("spectral check needs a square matrix".into()));
    }
    let asym = (h - h.transpose()).amax();
    if asym > 1e-12 {
        return Err(GsrError::InvalidConfig {
            field: "hessian".into(),
            reason: format!("not symmetric (max |H − Hᵀ| = {asym:.3e})"),
        });
    }
    let min_eigenvalue = h.clone().symmetric_eigenvalues().min();
    Ok(SpectralReport {
        min_eigenvalue,
        lambda,
        passed: min_eigenvalue >= lambda - 1e-9,
    })
}

/// Spectral check of the inner Hessian at `(w, ψ)` with coefficient λ.
///
/// Unlike [`hessian`], λ = 0 is allowed here so the failing case can be
/// exercised.
pub fn hessian_spectral_check(
    ds: &EmbeddingDataset,
    w: &SampleWeights,
    psi: &ClassifierParams,
    lambda: f64,
) -> Result<SpectralReport> {
    let mut h = data_hessian(ds, w, psi)?;
    for i in 0..h.nrows() {
        h[(i, i)] += lambda;
    }
    spectral_check(&h, lambda)
}

/// `wᵢ = 1 / (m·|group(i)|)`: every group gets the same total weight.
pub fn group_balanced_weights(ds: &EmbeddingDataset) -> Result<SampleWeights> {
    let counts = ds.group_counts()?;
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(GsrError::EmptyGroup(g));
    }
    let m = counts.len() as f64;
    let w = ds
        .require_groups()?
        .iter()
        .map(|&g| 1.0 / (m * counts[g] as f64))
        .collect();
    Ok(SampleWeights::new(w)?
        .normalized()
        .expect("positive weights"))
}

/// Last layer fitted with group-balanced weights. Uses held-out group labels.
pub fn group_balanced_baseline(
    heldout: &EmbeddingDataset,
    inner: &InnerSolveConfig,
) -> Result<ClassifierParams> {
    let w = group_balanced_weights(heldout)?;
    fit_last_layer(heldout, &w, inner, &ClassifierParams::zeros(heldout.dim(), heldout.n_classes()))
}

/// Last layer fitted with uniform weights, from the same start as the
/// first step of the reweighting loop.
pub fn erm_baseline(heldout: &EmbeddingDataset, inner: &InnerSolveConfig) -> Result<ClassifierParams> {
    fit_last_layer(
        heldout,
        &SampleWeights::uniform(heldout.len()),
        inner,
        &ClassifierParams::zeros(heldout.dim(), heldout.n_classes()),
    )
}

/// Shape of a random verification instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceShape {
    pub n_heldout: usize,
    pub n_target_per_group: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub n_groups: usize,
    /// Per-coordinate feature scales cycle through these values; unequal
    /// scales give an anisotropic Hessian.
    pub feature_scales: [f64; 2],
}

impl Default for InstanceShape {
    fn default() -> Self {
        Self {
            n_heldout: 5,
            n_target_per_group: 3,
            dim: 2,
            n_classes: 2,
            n_groups: 2,
            feature_scales: [1.0, 1.0],
        }
    }
}

/// Held-out and target sets with Gaussian features and uniformly drawn
/// labels; the target set has `n_target_per_group` samples in every group.
/// Held-out group ids cycle through `0..m`.
pub fn random_instance(shape: &InstanceShape, seed: u64) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
    let mut rng = rng_from_seed(seed);
    let mut draw = |n: usize, groups: Vec<usize>| {
        let x = DMatrix::from_fn(n, shape.dim, |_, j| {
            let z: f64 = rng.sample(StandardNormal);
            z * shape.feature_scales[j % 2]
        });
        let labels = (0..n).map(|_| rng.random_range(0..shape.n_classes)).collect();
        EmbeddingDataset::new(x, labels, Some(groups), Some(shape.n_classes), Some(shape.n_groups))
    };
    let m = shape.n_groups;
    let heldout_groups: Vec<usize> = (0..shape.n_heldout).map(|i| i % m).collect();
    let heldout = draw(shape.n_heldout, heldout_groups)?;
    let target_groups: Vec<usize> = (0..m)
        .flat_map(|g| std::iter::repeat_n(g, shape.n_target_per_group))
        .collect();
    let target = draw(target_groups.len(), target_groups)?;
    Ok((heldout, target))
}
